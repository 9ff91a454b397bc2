#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fernet/inception.hpp"
#include "fernet/layers.hpp"

namespace fernet {

enum class LayerKind : std::uint8_t {
  convolution = 0,
  max_pool = 1,
  avg_pool = 2,  // global average over all spatial positions
  fully_connected = 3,
  relu = 4,
  concat = 5,  // only meaningful inside an inception block
  inception = 6,
  softmax_loss = 7,
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  int kernel = 0;  // square patch; conv and max-pool
  int stride = 0;
  int pad = 0;
  int out_channels = 0;  // conv and fully-connected
  InceptionSpec inception{};

  static LayerSpec conv(std::string name, int kernel, int stride, int pad, int out_channels);
  static LayerSpec max_pool(std::string name, int kernel, int stride, int pad = 0);
  static LayerSpec global_avg_pool(std::string name);
  static LayerSpec fully_connected(std::string name, int units);
  static LayerSpec relu(std::string name);
  static LayerSpec inception_block(std::string name, InceptionSpec spec);
  static LayerSpec softmax_loss(std::string name);

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkConfig {
  int input_channels = 1;
  int input_height = 48;
  int input_width = 48;
  int num_classes = 7;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkConfig&) const = default;
};

/// Knobs of the expression-recognition topology.
struct FerNetOptions {
  int input_channels = 1;
  int num_classes = 7;
  int fc7_units = 4096;
  int fc8_units = 1024;
  /// Divides every channel and unit count (rounded up); 1 = full width.
  int width_divisor = 1;
};

/// conv1 7x7/2 -> pool1 3x3/2 -> conv2 3x3/1 -> pool2 3x3/2 -> inception 3a ->
/// inception 3b -> pool4 3x3/2 -> inception 4a -> global avg -> fc7 -> fc8 ->
/// classifier -> softmax, ReLU after every conv and fc except the classifier.
NetworkConfig fer_network_config(const FerNetOptions& options = {});

/// A small network with every layer kind, 12x12 input and widths <= 4.
NetworkConfig tiny_network_config(int num_classes = 7);

struct LayerShape {
  std::string name;
  LayerKind kind;
  int channels;
  int height;
  int width;
};

/// Output shape of every layer for one image. Throws ConfigError when the
/// chain does not shape-check.
std::vector<LayerShape> shape_trace(const NetworkConfig& config);

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  T lr_mult = 1;
  bool is_bias = false;
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> value;
};

template <typename T>
class Network {
 public:
  static constexpr T kDefaultBiasLrMult = 2;

  /// Allocates parameters. Weights are Xavier-uniform in
  /// +-sqrt(6 / (fan_in + fan_out)), biases 0, drawn in parameter order from
  /// a generator seeded with `seed`.
  static Network build(const NetworkConfig& config, std::uint64_t seed);

  /// Allocates zero parameters (used by the checkpoint loader).
  static Network zeros(const NetworkConfig& config);

  const NetworkConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;  // total scalar count

  void set_bias_lr_mult(T mult);

  template <typename U>
  Network<U> cast() const {
    Network<U> out = Network<U>::zeros(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i].value = params_[i].value.template cast<U>();
      out.parameters()[i].lr_mult = static_cast<U>(params_[i].lr_mult);
    }
    return out;
  }

  // Index of the first parameter of layer `layer` (weight, then bias; six
  // pairs for inception), or -1 when the layer has none.
  int first_param(std::size_t layer) const { return layer_param_[layer]; }

 private:
  Network() = default;
  NetworkConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<int> layer_param_;
};

enum class ForwardMode { train, inference };

template <typename T>
struct LayerCache {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;
  std::optional<InceptionCache<T>> inception;
};

template <typename T>
struct ForwardCache {
  BasicTensor<T> input;
  std::vector<LayerCache<T>> layers;  // empty in inference mode
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;  // [n, num_classes]
  ForwardCache<T> cache;
};

template <typename T>
struct BackwardResult {
  T loss = 0;
  BasicTensor<T> probs;
  std::vector<NamedTensor<T>> grads;  // aligned with Network::parameters()
};

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& batch, ForwardMode mode);

template <typename T>
BackwardResult<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                           std::span<const int> labels);

/// Convenience: loss of a batch without keeping a cache.
template <typename T>
T batch_loss(const Network<T>& net, const BasicTensor<T>& batch, std::span<const int> labels);

struct LayerOps {
  std::string name;
  LayerKind kind;
  std::uint64_t macs;
};

struct OpCount {
  std::vector<LayerOps> layers;
  std::uint64_t total = 0;
};

/// Multiply-accumulates per image: conv oh*ow*oc*k*k*ic, fc d*u, pooling
/// window*outputs, inception the sum of its convolutions and pool.
OpCount count_operations(const NetworkConfig& config);

}  // namespace fernet
