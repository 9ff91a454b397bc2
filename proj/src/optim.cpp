#include "fernet/optim.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "fernet/augment.hpp"
#include "fernet/eval.hpp"
#include "fernet/random.hpp"

namespace fernet {

void LrSchedule::validate() const {
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be > 0");
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(power >= 0 && power <= 1)) throw ConfigError("power must lie in [0, 1]");
  if (policy == LrPolicy::step && step_size < 1) throw ConfigError("step_size must be >= 1");
  if ((policy == LrPolicy::step || policy == LrPolicy::exp) && !(gamma > 0 && gamma <= 1)) {
    throw ConfigError("gamma must lie in (0, 1]");
  }
}

double poly_lr(const LrSchedule& sched, std::int64_t iter) {
  sched.validate();
  if (iter < 0 || iter > sched.max_iter) {
    throw RangeError("iteration " + std::to_string(iter) + " outside [0, " +
                     std::to_string(sched.max_iter) + "]");
  }
  if (iter == 0) return sched.base_lr;
  if (iter == sched.max_iter) return 0.0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(sched.max_iter);
  return sched.base_lr * std::pow(frac, sched.power);
}

double learning_rate(const LrSchedule& sched, std::int64_t iter) {
  switch (sched.policy) {
    case LrPolicy::poly: return poly_lr(sched, iter);
    case LrPolicy::fixed: break;
    case LrPolicy::step:
      sched.validate();
      return sched.base_lr * std::pow(sched.gamma, static_cast<double>(iter / sched.step_size));
    case LrPolicy::exp:
      sched.validate();
      return sched.base_lr * std::pow(sched.gamma, static_cast<double>(iter));
  }
  sched.validate();
  return sched.base_lr;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(bias_lr_mult > 0)) throw ConfigError("bias lr multiplier must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
  if (eval_batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
}

template <typename T>
void sgd_step(Network<T>& net, std::span<const NamedTensor<T>> grads, double lr,
              const TrainConfig& cfg, SgdState<T>& state) {
  auto& params = net.parameters();
  if (grads.size() != params.size()) {
    throw ShapeError(std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].value.shape() != params[i].value.shape()) {
      throw ShapeError("gradient of " + params[i].name + " has shape " +
                       shape_string(grads[i].value.shape()) + ", parameter has " +
                       shape_string(params[i].value.shape()));
    }
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.value.shape());
  }
  const T momentum = static_cast<T>(cfg.momentum);
  const T decay = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T rate = static_cast<T>(lr) * params[i].lr_mult;
    T* w = params[i].value.data();
    T* v = state.velocity[i].data();
    const T* g = grads[i].value.data();
    const std::size_t n = params[i].value.size();
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = momentum * v[j] - rate * (g[j] + decay * w[j]);
      w[j] += v[j];
    }
  }
}

std::int64_t iterations_for(std::size_t n, const TrainConfig& cfg) {
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  return static_cast<std::int64_t>(cfg.epochs) * static_cast<std::int64_t>((n + b - 1) / b);
}

template <typename T>
TrainHistory train(Network<T>& net, std::span<const Sample* const> train_set,
                   std::span<const Sample* const> val_set, const TrainConfig& cfg,
                   LrSchedule sched, const TrainCallbacks& callbacks) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  sched.max_iter = iterations_for(train_set.size(), cfg);
  sched.validate();
  net.set_bias_lr_mult(static_cast<T>(cfg.bias_lr_mult));

  const int classes = net.config().num_classes;
  for (const Sample* s : train_set) {
    if (s->label < 0 || s->label >= classes) {
      throw LabelError("training label " + std::to_string(s->label) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }

  TrainHistory history;
  history.losses.reserve(static_cast<std::size_t>(sched.max_iter));
  SgdState<T> state;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::vector<GrayImage> views;
  std::vector<const GrayImage*> images;
  std::vector<int> labels;
  std::int64_t iter = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      views.clear();
      images.clear();
      labels.clear();
      views.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = *train_set[order[i]];
        const int view = cfg.augment ? static_cast<int>(uniform_index(rng, kTrainingViews)) : 0;
        views.push_back(view == 0 ? s.image : training_view(s.image, view));
        labels.push_back(s.label);
        ++history.samples_seen[s.database_id];
      }
      for (const GrayImage& g : views) images.push_back(&g);

      const double lr = learning_rate(sched, iter);
      auto fwd = forward(net, make_batch<T>(images), ForwardMode::train);
      const BackwardResult<T> back = backward(net, fwd.cache, labels);
      const double loss = static_cast<double>(back.loss);
      if (!std::isfinite(loss)) throw DivergenceError(iter);
      sgd_step<T>(net, back.grads, lr, cfg, state);
      history.losses.push_back(loss);
      if (callbacks.on_iteration) callbacks.on_iteration(iter, loss, lr);
      ++iter;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.last_iter = iter - 1;
    if (val_set.empty()) {
      record.val_top1 = record.val_top2 = std::numeric_limits<double>::quiet_NaN();
    } else {
      const Metrics m = evaluate(net, val_set, ViewMode::single, cfg.eval_batch_size);
      record.val_top1 = m.top1;
      record.val_top2 = m.top2;
    }
    history.epochs.push_back(record);
    if (callbacks.on_epoch) callbacks.on_epoch(record);
  }
  history.iterations = iter;
  return history;
}

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

bool bitwise_equal(const TrainHistory& a, const TrainHistory& b) {
  if (a.iterations != b.iterations || a.samples_seen != b.samples_seen) return false;
  if (a.losses.size() != b.losses.size() || a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.losses.size(); ++i) {
    if (!same_bits(a.losses[i], b.losses[i])) return false;
  }
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const EpochRecord& x = a.epochs[i];
    const EpochRecord& y = b.epochs[i];
    if (x.epoch != y.epoch || x.last_iter != y.last_iter || !same_bits(x.val_top1, y.val_top1) ||
        !same_bits(x.val_top2, y.val_top2)) {
      return false;
    }
  }
  return true;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out.precision(9);
  out << "iter,loss,epoch,val_top1,val_top2\n";
  std::size_t e = 0;
  for (std::size_t i = 0; i < history.losses.size(); ++i) {
    out << i << ',' << history.losses[i] << ',';
    if (e < history.epochs.size() && history.epochs[e].last_iter == static_cast<std::int64_t>(i)) {
      const EpochRecord& r = history.epochs[e++];
      out << r.epoch << ',';
      if (std::isfinite(r.val_top1)) out << r.val_top1 << ',' << r.val_top2;
      else out << ',';
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

#define FERNET_INSTANTIATE(T)                                                                 \
  template void sgd_step(Network<T>&, std::span<const NamedTensor<T>>, double,                \
                         const TrainConfig&, SgdState<T>&);                                   \
  template TrainHistory train(Network<T>&, std::span<const Sample* const>,                    \
                              std::span<const Sample* const>, const TrainConfig&, LrSchedule, \
                              const TrainCallbacks&);

FERNET_INSTANTIATE(float)
FERNET_INSTANTIATE(double)
#undef FERNET_INSTANTIATE

}  // namespace fernet
