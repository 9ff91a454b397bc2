#include "fernet/inception.hpp"

namespace fernet {

void InceptionSpec::validate() const {
  for (int width : {n1x1, n3x3_reduce, n3x3, n5x5_reduce, n5x5, pool_proj}) {
    if (width < 1) throw ConfigError("inception branch widths must be >= 1");
  }
}

const char* inception_conv_name(InceptionConv conv) {
  switch (conv) {
    case InceptionConv::conv1x1: return "1x1";
    case InceptionConv::reduce3x3: return "3x3_reduce";
    case InceptionConv::conv3x3: return "3x3";
    case InceptionConv::reduce5x5: return "5x5_reduce";
    case InceptionConv::conv5x5: return "5x5";
    case InceptionConv::pool_proj: return "pool_proj";
  }
  return "?";
}

InceptionConvShape inception_conv_shape(const InceptionSpec& spec, int in_channels,
                                        InceptionConv conv) {
  switch (conv) {
    case InceptionConv::conv1x1: return {in_channels, spec.n1x1, 1, 0};
    case InceptionConv::reduce3x3: return {in_channels, spec.n3x3_reduce, 1, 0};
    case InceptionConv::conv3x3: return {spec.n3x3_reduce, spec.n3x3, 3, 1};
    case InceptionConv::reduce5x5: return {in_channels, spec.n5x5_reduce, 1, 0};
    case InceptionConv::conv5x5: return {spec.n5x5_reduce, spec.n5x5, 5, 2};
    case InceptionConv::pool_proj: return {in_channels, spec.pool_proj, 1, 0};
  }
  throw ConfigError("unknown inception convolution");
}

namespace {

constexpr PoolWindow kBranchPool{3, 1, 1};

template <typename T>
BasicTensor<T> conv_relu(const BasicTensor<T>& input, const ConvWeightsView<T>& view,
                         const InceptionSpec& spec, int in_channels, InceptionConv which) {
  const InceptionConvShape shape = inception_conv_shape(spec, in_channels, which);
  if (view.weight == nullptr || view.bias == nullptr) {
    throw ConfigError(std::string("inception: missing weights for ") + inception_conv_name(which));
  }
  if (view.weight->shape() != Shape{shape.out_channels, shape.in_channels, shape.kernel, shape.kernel}) {
    throw ShapeError(std::string("inception ") + inception_conv_name(which) + ": weights " +
                     shape_string(view.weight->shape()) + " do not match spec");
  }
  return relu_forward(conv2d_forward(input, *view.weight, *view.bias, ConvStride{1, shape.pad}));
}

template <typename T>
const ConvWeightsView<T>& view_of(const InceptionWeights<T>& weights, InceptionConv conv) {
  return weights[static_cast<std::size_t>(conv)];
}

}  // namespace

template <typename T>
InceptionResult<T> inception_forward(const BasicTensor<T>& input, const InceptionSpec& spec,
                                     const InceptionWeights<T>& weights) {
  spec.validate();
  require_rank(input, 4, "inception input");
  const int c = input.dim(1);
  InceptionResult<T> result;
  InceptionCache<T>& cache = result.cache;
  cache.input = input;
  cache.branch_out[0] =
      conv_relu(input, view_of(weights, InceptionConv::conv1x1), spec, c, InceptionConv::conv1x1);
  cache.reduce3 = conv_relu(input, view_of(weights, InceptionConv::reduce3x3), spec, c,
                            InceptionConv::reduce3x3);
  cache.branch_out[1] = conv_relu(cache.reduce3, view_of(weights, InceptionConv::conv3x3), spec, c,
                                  InceptionConv::conv3x3);
  cache.reduce5 = conv_relu(input, view_of(weights, InceptionConv::reduce5x5), spec, c,
                            InceptionConv::reduce5x5);
  cache.branch_out[2] = conv_relu(cache.reduce5, view_of(weights, InceptionConv::conv5x5), spec, c,
                                  InceptionConv::conv5x5);
  MaxPoolResult<T> pooled = maxpool_forward(input, kBranchPool);
  cache.pooled = std::move(pooled.output);
  cache.pool_argmax = std::move(pooled.argmax);
  cache.branch_out[3] = conv_relu(cache.pooled, view_of(weights, InceptionConv::pool_proj), spec,
                                  c, InceptionConv::pool_proj);
  result.output = concat_channels<T>(cache.branch_out);
  return result;
}

template <typename T>
InceptionGrads<T> inception_backward(const InceptionCache<T>& cache, const InceptionSpec& spec,
                                     const InceptionWeights<T>& weights,
                                     const BasicTensor<T>& grad_out, bool need_input_grad) {
  const std::array<int, 4> widths{spec.n1x1, spec.n3x3, spec.n5x5, spec.pool_proj};
  std::vector<BasicTensor<T>> branch_grads = split_channels(grad_out, std::span<const int>(widths));

  InceptionGrads<T> grads;
  auto store = [&](InceptionConv which, ConvGrads<T>& g) {
    grads.weights[static_cast<std::size_t>(which)] = std::move(g.weights);
    grads.biases[static_cast<std::size_t>(which)] = std::move(g.bias);
  };
  auto backward_conv = [&](InceptionConv which, const BasicTensor<T>& input,
                           const BasicTensor<T>& post_relu, const BasicTensor<T>& grad,
                           bool want_input) {
    const InceptionConvShape shape = inception_conv_shape(spec, cache.input.dim(1), which);
    ConvGrads<T> g = conv2d_backward(input, *view_of(weights, which).weight,
                                     relu_backward(post_relu, grad), ConvStride{1, shape.pad},
                                     want_input);
    BasicTensor<T> input_grad = std::move(g.input);
    store(which, g);
    return input_grad;
  };

  BasicTensor<T> g1 = backward_conv(InceptionConv::conv1x1, cache.input, cache.branch_out[0],
                                    branch_grads[0], need_input_grad);
  BasicTensor<T> g_reduce3 = backward_conv(InceptionConv::conv3x3, cache.reduce3,
                                           cache.branch_out[1], branch_grads[1], true);
  BasicTensor<T> g3 = backward_conv(InceptionConv::reduce3x3, cache.input, cache.reduce3,
                                    g_reduce3, need_input_grad);
  BasicTensor<T> g_reduce5 = backward_conv(InceptionConv::conv5x5, cache.reduce5,
                                           cache.branch_out[2], branch_grads[2], true);
  BasicTensor<T> g5 = backward_conv(InceptionConv::reduce5x5, cache.input, cache.reduce5,
                                    g_reduce5, need_input_grad);
  BasicTensor<T> g_pooled = backward_conv(InceptionConv::pool_proj, cache.pooled,
                                          cache.branch_out[3], branch_grads[3], need_input_grad);

  if (need_input_grad) {
    BasicTensor<T> gp = maxpool_backward<T>(cache.pool_argmax, g_pooled, cache.input.shape());
    grads.input = std::move(g1);
    for (std::size_t i = 0; i < grads.input.size(); ++i) {
      grads.input[i] += g3[i] + g5[i] + gp[i];
    }
  }
  return grads;
}

template InceptionResult<float> inception_forward(const BasicTensor<float>&, const InceptionSpec&,
                                                  const InceptionWeights<float>&);
template InceptionResult<double> inception_forward(const BasicTensor<double>&, const InceptionSpec&,
                                                   const InceptionWeights<double>&);
template InceptionGrads<float> inception_backward(const InceptionCache<float>&, const InceptionSpec&,
                                                  const InceptionWeights<float>&,
                                                  const BasicTensor<float>&, bool);
template InceptionGrads<double> inception_backward(const InceptionCache<double>&,
                                                   const InceptionSpec&,
                                                   const InceptionWeights<double>&,
                                                   const BasicTensor<double>&, bool);

}  // namespace fernet
