#include "fernet/network.hpp"

#include <cmath>

#include "fernet/random.hpp"

namespace fernet {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::convolution: return "convolution";
    case LayerKind::max_pool: return "max-pool";
    case LayerKind::avg_pool: return "avg-pool";
    case LayerKind::fully_connected: return "fully-connected";
    case LayerKind::relu: return "relu";
    case LayerKind::concat: return "concat";
    case LayerKind::inception: return "inception";
    case LayerKind::softmax_loss: return "softmax-loss";
  }
  return "?";
}

LayerSpec LayerSpec::conv(std::string name, int kernel, int stride, int pad, int out_channels) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::convolution;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.out_channels = out_channels;
  return s;
}

LayerSpec LayerSpec::max_pool(std::string name, int kernel, int stride, int pad) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::max_pool;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::global_avg_pool(std::string name) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::avg_pool;
  return s;
}

LayerSpec LayerSpec::fully_connected(std::string name, int units) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::fully_connected;
  s.out_channels = units;
  return s;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec LayerSpec::inception_block(std::string name, InceptionSpec spec) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::inception;
  s.inception = spec;
  return s;
}

LayerSpec LayerSpec::softmax_loss(std::string name) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::softmax_loss;
  return s;
}

NetworkConfig fer_network_config(const FerNetOptions& options) {
  if (options.width_divisor < 1) throw ConfigError("width divisor must be >= 1");
  const int d = options.width_divisor;
  auto w = [d](int channels) { return (channels + d - 1) / d; };
  auto block = [&](int a, int b, int c, int e, int f, int g) {
    return InceptionSpec{w(a), w(b), w(c), w(e), w(f), w(g)};
  };
  NetworkConfig config;
  config.input_channels = options.input_channels;
  config.num_classes = options.num_classes;
  config.layers = {
      LayerSpec::conv("conv1", 7, 2, 3, w(64)),
      LayerSpec::relu("relu1"),
      LayerSpec::max_pool("pool1", 3, 2),
      LayerSpec::conv("conv2", 3, 1, 1, w(192)),
      LayerSpec::relu("relu2"),
      LayerSpec::max_pool("pool2", 3, 2),
      LayerSpec::inception_block("inception_3a", block(64, 96, 128, 16, 32, 32)),
      LayerSpec::inception_block("inception_3b", block(128, 128, 192, 32, 96, 64)),
      LayerSpec::max_pool("pool4", 3, 2),
      LayerSpec::inception_block("inception_4a", block(192, 96, 208, 16, 48, 64)),
      LayerSpec::global_avg_pool("pool6"),
      LayerSpec::fully_connected("fc7", w(options.fc7_units)),
      LayerSpec::relu("relu7"),
      LayerSpec::fully_connected("fc8", w(options.fc8_units)),
      LayerSpec::relu("relu8"),
      LayerSpec::fully_connected("classifier", options.num_classes),
      LayerSpec::softmax_loss("loss"),
  };
  return config;
}

NetworkConfig tiny_network_config(int num_classes) {
  NetworkConfig config;
  config.input_channels = 1;
  config.input_height = 12;
  config.input_width = 12;
  config.num_classes = num_classes;
  const InceptionSpec small{1, 2, 1, 2, 1, 1};
  config.layers = {
      LayerSpec::conv("conv1", 5, 2, 2, 4),
      LayerSpec::relu("relu1"),
      LayerSpec::max_pool("pool1", 3, 2),
      LayerSpec::conv("conv2", 3, 1, 1, 4),
      LayerSpec::relu("relu2"),
      LayerSpec::inception_block("inception_a", small),
      LayerSpec::max_pool("pool2", 3, 2),
      LayerSpec::inception_block("inception_b", small),
      LayerSpec::global_avg_pool("pool3"),
      LayerSpec::fully_connected("fc1", 4),
      LayerSpec::relu("relu3"),
      LayerSpec::fully_connected("fc2", 4),
      LayerSpec::relu("relu4"),
      LayerSpec::fully_connected("classifier", num_classes),
      LayerSpec::softmax_loss("loss"),
  };
  return config;
}

std::vector<LayerShape> shape_trace(const NetworkConfig& config) {
  if (config.input_channels < 1 || config.input_height < 1 || config.input_width < 1) {
    throw ConfigError("network input extents must be >= 1");
  }
  if (config.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (config.layers.empty() || config.layers.back().kind != LayerKind::softmax_loss) {
    throw ConfigError("the last layer must be softmax-loss");
  }
  std::vector<LayerShape> trace;
  int c = config.input_channels;
  int h = config.input_height;
  int w = config.input_width;
  bool flat = false;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& layer = config.layers[i];
    auto fail = [&](const std::string& why) {
      throw ConfigError("layer '" + layer.name + "' (" + layer_kind_name(layer.kind) + "): " + why);
    };
    const bool spatial_kind = layer.kind == LayerKind::convolution ||
                              layer.kind == LayerKind::max_pool ||
                              layer.kind == LayerKind::inception;
    if (flat && spatial_kind) fail("needs a spatial input but follows a fully-connected layer");
    try {
      switch (layer.kind) {
        case LayerKind::convolution: {
          if (layer.out_channels < 1) fail("out_channels must be >= 1");
          PatchGeometry g{c, h, w, layer.kernel, layer.kernel, layer.stride, layer.pad};
          g.validate();
          h = g.out_height();
          w = g.out_width();
          c = layer.out_channels;
          break;
        }
        case LayerKind::max_pool: {
          const PoolWindow window{layer.kernel, layer.stride, layer.pad};
          h = pooled_extent(h, window);
          w = pooled_extent(w, window);
          break;
        }
        case LayerKind::avg_pool:
          h = 1;
          w = 1;
          break;
        case LayerKind::fully_connected:
          if (layer.out_channels < 1) fail("out_channels must be >= 1");
          c = layer.out_channels;
          h = 1;
          w = 1;
          flat = true;
          break;
        case LayerKind::relu:
          break;
        case LayerKind::concat:
          fail("concat is only valid inside an inception block");
          break;
        case LayerKind::inception:
          layer.inception.validate();
          c = layer.inception.out_channels();
          break;
        case LayerKind::softmax_loss:
          if (i + 1 != config.layers.size()) fail("softmax-loss must be the last layer");
          if (h != 1 || w != 1 || c != config.num_classes) {
            fail("expects " + std::to_string(config.num_classes) + " class scores, got " +
                 std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
          }
          break;
      }
    } catch (const ShapeError& e) {
      fail(e.what());
    }
    trace.push_back({layer.name, layer.kind, c, h, w});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Network

namespace {

struct ParamShape {
  std::string name;
  Shape shape;
  int fan_in;
  int fan_out;
  bool is_bias;
};

// Parameter inventory in storage order plus, per layer, its first index.
std::vector<ParamShape> parameter_shapes(const NetworkConfig& config, std::vector<int>& first) {
  const std::vector<LayerShape> trace = shape_trace(config);
  std::vector<ParamShape> shapes;
  first.assign(config.layers.size(), -1);
  int c = config.input_channels;
  int h = config.input_height;
  int w = config.input_width;
  auto add_pair = [&](const std::string& prefix, Shape weight, int fan_in, int fan_out) {
    const int out = weight[0];
    shapes.push_back({prefix + ".weight", std::move(weight), fan_in, fan_out, false});
    shapes.push_back({prefix + ".bias", Shape{out}, fan_in, fan_out, true});
  };
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& layer = config.layers[i];
    switch (layer.kind) {
      case LayerKind::convolution: {
        first[i] = static_cast<int>(shapes.size());
        const int k2 = layer.kernel * layer.kernel;
        add_pair(layer.name, Shape{layer.out_channels, c, layer.kernel, layer.kernel}, c * k2,
                 layer.out_channels * k2);
        break;
      }
      case LayerKind::fully_connected: {
        first[i] = static_cast<int>(shapes.size());
        const int d = c * h * w;
        add_pair(layer.name, Shape{layer.out_channels, d}, d, layer.out_channels);
        break;
      }
      case LayerKind::inception: {
        first[i] = static_cast<int>(shapes.size());
        for (int j = 0; j < kInceptionConvs; ++j) {
          const auto which = static_cast<InceptionConv>(j);
          const InceptionConvShape s = inception_conv_shape(layer.inception, c, which);
          const int k2 = s.kernel * s.kernel;
          add_pair(layer.name + "." + inception_conv_name(which),
                   Shape{s.out_channels, s.in_channels, s.kernel, s.kernel}, s.in_channels * k2,
                   s.out_channels * k2);
        }
        break;
      }
      default:
        break;
    }
    c = trace[i].channels;
    h = trace[i].height;
    w = trace[i].width;
  }
  return shapes;
}

}  // namespace

template <typename T>
Network<T> Network<T>::zeros(const NetworkConfig& config) {
  Network net;
  net.config_ = config;
  for (const ParamShape& s : parameter_shapes(config, net.layer_param_)) {
    net.params_.push_back(
        {s.name, BasicTensor<T>(s.shape), s.is_bias ? kDefaultBiasLrMult : T{1}, s.is_bias});
  }
  return net;
}

template <typename T>
Network<T> Network<T>::build(const NetworkConfig& config, std::uint64_t seed) {
  Network net;
  net.config_ = config;
  Rng rng(seed);
  for (const ParamShape& s : parameter_shapes(config, net.layer_param_)) {
    BasicTensor<T> value(s.shape);
    if (!s.is_bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
      for (T& v : value.values()) v = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * limit);
    }
    net.params_.push_back({s.name, std::move(value), s.is_bias ? kDefaultBiasLrMult : T{1}, s.is_bias});
  }
  return net;
}

template <typename T>
Parameter<T>& Network<T>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& Network<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

template <typename T>
void Network<T>::set_bias_lr_mult(T mult) {
  for (auto& p : params_) {
    if (p.is_bias) p.lr_mult = mult;
  }
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

template <typename T>
InceptionWeights<T> inception_view(const Network<T>& net, std::size_t layer) {
  InceptionWeights<T> view;
  const int first = net.first_param(layer);
  for (int j = 0; j < kInceptionConvs; ++j) {
    view[static_cast<std::size_t>(j)] = {&net.parameters()[static_cast<std::size_t>(first + 2 * j)].value,
                                         &net.parameters()[static_cast<std::size_t>(first + 2 * j + 1)].value};
  }
  return view;
}

template <typename T>
const BasicTensor<T>& weight_of(const Network<T>& net, std::size_t layer) {
  return net.parameters()[static_cast<std::size_t>(net.first_param(layer))].value;
}

template <typename T>
const BasicTensor<T>& bias_of(const Network<T>& net, std::size_t layer) {
  return net.parameters()[static_cast<std::size_t>(net.first_param(layer) + 1)].value;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const BasicTensor<T>& batch, ForwardMode mode) {
  const NetworkConfig& config = net.config();
  require_rank(batch, 4, "network input");
  if (batch.dim(1) != config.input_channels || batch.dim(2) != config.input_height ||
      batch.dim(3) != config.input_width) {
    throw ShapeError("network expects [n," + std::to_string(config.input_channels) + "," +
                     std::to_string(config.input_height) + "," +
                     std::to_string(config.input_width) + "], got " + shape_string(batch.shape()));
  }
  const bool keep = mode == ForwardMode::train;
  ForwardResult<T> result;
  if (keep) {
    result.cache.input = batch;
    result.cache.layers.resize(config.layers.size());
  }
  BasicTensor<T> current;
  const BasicTensor<T>* x = &batch;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& layer = config.layers[i];
    LayerCache<T> entry;
    switch (layer.kind) {
      case LayerKind::convolution:
        entry.output = conv2d_forward(*x, weight_of(net, i), bias_of(net, i),
                                      ConvStride{layer.stride, layer.pad});
        break;
      case LayerKind::relu:
        entry.output = relu_forward(*x);
        break;
      case LayerKind::max_pool: {
        MaxPoolResult<T> pooled = maxpool_forward(*x, PoolWindow{layer.kernel, layer.stride, layer.pad});
        entry.output = std::move(pooled.output);
        if (keep) entry.argmax = std::move(pooled.argmax);
        break;
      }
      case LayerKind::avg_pool:
        entry.output = avgpool_global_forward(*x);
        break;
      case LayerKind::fully_connected:
        entry.output = fc_forward(*x, weight_of(net, i), bias_of(net, i));
        break;
      case LayerKind::inception: {
        InceptionResult<T> block = inception_forward(*x, layer.inception, inception_view(net, i));
        entry.output = std::move(block.output);
        if (keep) entry.inception = std::move(block.cache);
        break;
      }
      case LayerKind::softmax_loss:
        entry.output = x->reshaped({x->dim(0), config.num_classes});
        break;
      case LayerKind::concat:
        throw ConfigError("concat layer outside an inception block");
    }
    if (keep) {
      result.cache.layers[i] = std::move(entry);
      x = &result.cache.layers[i].output;
    } else {
      current = std::move(entry.output);
      x = &current;
    }
  }
  result.logits = *x;
  return result;
}

template <typename T>
BackwardResult<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                           std::span<const int> labels) {
  const NetworkConfig& config = net.config();
  if (cache.layers.size() != config.layers.size()) {
    throw ShapeError("backward needs a cache from a train-mode forward pass");
  }
  BackwardResult<T> result;
  const BasicTensor<T>& logits = cache.layers.back().output;
  SoftmaxLoss<T> sce = softmax_cross_entropy(logits, labels);
  result.loss = sce.loss;
  BasicTensor<T> grad = softmax_cross_entropy_backward(sce.probs, labels);
  result.probs = std::move(sce.probs);

  result.grads.resize(net.parameters().size());
  for (std::size_t j = 0; j < net.parameters().size(); ++j) {
    result.grads[j].name = net.parameters()[j].name;
  }
  auto assign = [&](int index, BasicTensor<T>&& value) {
    result.grads[static_cast<std::size_t>(index)].value = std::move(value);
  };

  for (std::size_t i = config.layers.size(); i-- > 0;) {
    const LayerSpec& layer = config.layers[i];
    const BasicTensor<T>& input = i == 0 ? cache.input : cache.layers[i - 1].output;
    const bool need_input = i > 0;
    switch (layer.kind) {
      case LayerKind::softmax_loss:
        grad = grad.reshaped(input.shape());
        break;
      case LayerKind::relu:
        grad = relu_backward(input, grad);
        break;
      case LayerKind::convolution: {
        ConvGrads<T> g = conv2d_backward(input, weight_of(net, i), grad,
                                         ConvStride{layer.stride, layer.pad}, need_input);
        assign(net.first_param(i), std::move(g.weights));
        assign(net.first_param(i) + 1, std::move(g.bias));
        grad = std::move(g.input);
        break;
      }
      case LayerKind::fully_connected: {
        ConvGrads<T> g = fc_backward(input, weight_of(net, i), grad, need_input);
        assign(net.first_param(i), std::move(g.weights));
        assign(net.first_param(i) + 1, std::move(g.bias));
        grad = std::move(g.input);
        break;
      }
      case LayerKind::max_pool:
        grad = maxpool_backward<T>(cache.layers[i].argmax, grad, input.shape());
        break;
      case LayerKind::avg_pool:
        grad = avgpool_global_backward(grad.reshaped({input.dim(0), input.dim(1), 1, 1}), input.shape());
        break;
      case LayerKind::inception: {
        InceptionGrads<T> g = inception_backward(*cache.layers[i].inception, layer.inception,
                                                 inception_view(net, i), grad, need_input);
        const int first = net.first_param(i);
        for (int j = 0; j < kInceptionConvs; ++j) {
          assign(first + 2 * j, std::move(g.weights[static_cast<std::size_t>(j)]));
          assign(first + 2 * j + 1, std::move(g.biases[static_cast<std::size_t>(j)]));
        }
        grad = std::move(g.input);
        break;
      }
      case LayerKind::concat:
        throw ConfigError("concat layer outside an inception block");
    }
  }
  return result;
}

template <typename T>
T batch_loss(const Network<T>& net, const BasicTensor<T>& batch, std::span<const int> labels) {
  const ForwardResult<T> out = forward(net, batch, ForwardMode::inference);
  return softmax_cross_entropy(out.logits, labels).loss;
}

// ---------------------------------------------------------------------------
// operation count

OpCount count_operations(const NetworkConfig& config) {
  const std::vector<LayerShape> trace = shape_trace(config);
  OpCount count;
  std::uint64_t c = static_cast<std::uint64_t>(config.input_channels);
  std::uint64_t h = static_cast<std::uint64_t>(config.input_height);
  std::uint64_t w = static_cast<std::uint64_t>(config.input_width);
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& layer = config.layers[i];
    const LayerShape& out = trace[i];
    const std::uint64_t oc = static_cast<std::uint64_t>(out.channels);
    const std::uint64_t oh = static_cast<std::uint64_t>(out.height);
    const std::uint64_t ow = static_cast<std::uint64_t>(out.width);
    const std::uint64_t k2 = static_cast<std::uint64_t>(layer.kernel) * layer.kernel;
    std::optional<std::uint64_t> macs;
    switch (layer.kind) {
      case LayerKind::convolution:
        macs = oh * ow * oc * k2 * c;
        break;
      case LayerKind::max_pool:
        macs = k2 * oh * ow * oc;
        break;
      case LayerKind::avg_pool:
        macs = h * w * c;
        break;
      case LayerKind::fully_connected:
        macs = c * h * w * oc;
        break;
      case LayerKind::inception: {
        std::uint64_t sum = 9 * h * w * c;  // 3x3/1 branch pool
        for (int j = 0; j < kInceptionConvs; ++j) {
          const InceptionConvShape s = inception_conv_shape(layer.inception, static_cast<int>(c),
                                                            static_cast<InceptionConv>(j));
          sum += h * w * static_cast<std::uint64_t>(s.out_channels) * s.kernel * s.kernel *
                 static_cast<std::uint64_t>(s.in_channels);
        }
        macs = sum;
        break;
      }
      default:
        break;
    }
    if (macs) {
      count.layers.push_back({layer.name, layer.kind, *macs});
      count.total += *macs;
    }
    c = oc;
    h = oh;
    w = ow;
  }
  return count;
}

template class Network<float>;
template class Network<double>;

#define FERNET_INSTANTIATE(T)                                                                   \
  template ForwardResult<T> forward(const Network<T>&, const BasicTensor<T>&, ForwardMode);   \
  template BackwardResult<T> backward(const Network<T>&, const ForwardCache<T>&,              \
                                      std::span<const int>);                                  \
  template T batch_loss(const Network<T>&, const BasicTensor<T>&, std::span<const int>);

FERNET_INSTANTIATE(float)
FERNET_INSTANTIATE(double)
#undef FERNET_INSTANTIATE

}  // namespace fernet
