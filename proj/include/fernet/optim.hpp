#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fernet/dataset.hpp"
#include "fernet/network.hpp"

namespace fernet {

enum class LrPolicy { poly, fixed, step, exp };

struct LrSchedule {
  LrPolicy policy = LrPolicy::poly;
  double base_lr = 0.01;
  std::int64_t max_iter = 1;
  double power = 0.5;        // poly
  double gamma = 0.1;        // step and exp
  std::int64_t step_size = 1;  // step

  void validate() const;
};

/// base_lr * (1 - iter/max_iter)^power. RangeError outside [0, max_iter].
double poly_lr(const LrSchedule& sched, std::int64_t iter);

/// Rate for any policy: fixed base_lr, step base_lr*gamma^(iter/step_size),
/// exp base_lr*gamma^iter.
double learning_rate(const LrSchedule& sched, std::int64_t iter);

enum class Precision { fp32, fp64 };

struct TrainConfig {
  int batch_size = 250;
  int epochs = 200;
  double bias_lr_mult = 2.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  bool augment = true;  // one random view out of 11 per sample per epoch
  Precision precision = Precision::fp32;
  int eval_batch_size = 250;

  void validate() const;
};

template <typename T>
struct SgdState {
  std::vector<BasicTensor<T>> velocity;  // lazily sized to the parameters
};

/// v = momentum*v - lr*mult*(g + weight_decay*w); w += v, per parameter.
template <typename T>
void sgd_step(Network<T>& net, std::span<const NamedTensor<T>> grads, double lr,
              const TrainConfig& cfg, SgdState<T>& state);

struct EpochRecord {
  int epoch = 0;                 // 1-based
  std::int64_t last_iter = 0;    // iteration index of the epoch's final step
  double val_top1 = 0;           // NaN without a validation set
  double val_top2 = 0;
};

struct TrainHistory {
  std::vector<double> losses;  // one per iteration
  std::vector<EpochRecord> epochs;
  std::int64_t iterations = 0;
  /// Training samples drawn per database id over the whole run.
  std::map<std::string, std::size_t> samples_seen;
};

/// Bit-for-bit comparison of every recorded value (NaN equals NaN).
bool bitwise_equal(const TrainHistory& a, const TrainHistory& b);

struct TrainCallbacks {
  std::function<void(std::int64_t iter, double loss, double lr)> on_iteration;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// epochs * ceil(n / batch_size).
std::int64_t iterations_for(std::size_t n, const TrainConfig& cfg);

/// Mini-batch SGD. The schedule's max_iter is replaced by
/// iterations_for(train.size(), cfg); bias multipliers are set to
/// cfg.bias_lr_mult. Throws DataError on an empty training set and
/// DivergenceError on a non-finite loss.
template <typename T>
TrainHistory train(Network<T>& net, std::span<const Sample* const> train_set,
                   std::span<const Sample* const> val_set, const TrainConfig& cfg,
                   LrSchedule sched, const TrainCallbacks& callbacks = {});

/// CSV with header iter,loss,epoch,val_top1,val_top2; epoch columns are
/// filled on the last iteration of each epoch.
std::string history_csv(const TrainHistory& history);

}  // namespace fernet
