#include "fernet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fernet {

namespace {

template <typename T>
PatchGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                            ConvStride geometry) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  if (weights.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels, weights expect " + std::to_string(weights.dim(1)));
  }
  PatchGeometry g{input.dim(1), input.dim(2), input.dim(3), weights.dim(2), weights.dim(3),
                  geometry.stride, geometry.pad};
  g.validate();
  return g;
}

// [n, c, s] <-> [c, n*s] permutations used around the conv GEMMs.
template <typename T>
void channels_major_to_batch_major(const T* src, T* dst, int batch, int channels,
                                   std::size_t spatial) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* from = src + (static_cast<std::size_t>(c) * batch + n) * spatial;
      T* to = dst + (static_cast<std::size_t>(n) * channels + c) * spatial;
      std::copy(from, from + spatial, to);
    }
  }
}

template <typename T>
void batch_major_to_channels_major(const T* src, T* dst, int batch, int channels,
                                   std::size_t spatial) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* from = src + (static_cast<std::size_t>(n) * channels + c) * spatial;
      T* to = dst + (static_cast<std::size_t>(c) * batch + n) * spatial;
      std::copy(from, from + spatial, to);
    }
  }
}

void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// convolution

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, ConvStride geometry) {
  const PatchGeometry g = conv_geometry(input, weights, geometry);
  const int out_channels = weights.dim(0);
  if (bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " values for " +
                     std::to_string(out_channels) + " filters");
  }
  const int batch = input.dim(0);
  const int oh = g.out_height();
  const int ow = g.out_width();
  const std::size_t spatial = static_cast<std::size_t>(oh) * ow;
  const int columns = static_cast<int>(spatial * batch);
  const int patch = g.channels * g.kernel_h * g.kernel_w;

  const BasicTensor<T> cols = im2col(input, g.kernel_h, g.kernel_w, g.stride, g.pad);
  std::vector<T> product(static_cast<std::size_t>(out_channels) * columns);
  gemm(false, false, out_channels, columns, patch, weights.data(), cols.data(), product.data(),
       false);

  BasicTensor<T> out({batch, out_channels, oh, ow});
  channels_major_to_batch_major(product.data(), out.data(), batch, out_channels, spatial);
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < out_channels; ++c) {
      T* plane = out.data() + (static_cast<std::size_t>(n) * out_channels + c) * spatial;
      const T b = bias[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < spatial; ++i) plane[i] += b;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_out, ConvStride geometry,
                             bool need_input_grad) {
  const PatchGeometry g = conv_geometry(input, weights, geometry);
  const int batch = input.dim(0);
  const int out_channels = weights.dim(0);
  const int oh = g.out_height();
  const int ow = g.out_width();
  check_same_shape(grad_out.shape(), Shape{batch, out_channels, oh, ow}, "conv2d_backward grad");
  const std::size_t spatial = static_cast<std::size_t>(oh) * ow;
  const int columns = static_cast<int>(spatial * batch);
  const int patch = g.channels * g.kernel_h * g.kernel_w;

  std::vector<T> grad_mat(static_cast<std::size_t>(out_channels) * columns);
  batch_major_to_channels_major(grad_out.data(), grad_mat.data(), batch, out_channels, spatial);

  ConvGrads<T> grads;
  grads.bias = BasicTensor<T>({out_channels});
  for (int c = 0; c < out_channels; ++c) {
    const T* row = grad_mat.data() + static_cast<std::size_t>(c) * columns;
    T sum = 0;
    for (int j = 0; j < columns; ++j) sum += row[j];
    grads.bias[static_cast<std::size_t>(c)] = sum;
  }

  const BasicTensor<T> cols = im2col(input, g.kernel_h, g.kernel_w, g.stride, g.pad);
  // dW^T [patch, oc] = cols [patch, N] * G^T [N, oc]
  std::vector<T> grad_wt(static_cast<std::size_t>(patch) * out_channels);
  gemm(false, true, patch, out_channels, columns, cols.data(), grad_mat.data(), grad_wt.data(),
       false);
  grads.weights = BasicTensor<T>(weights.shape());
  for (int p = 0; p < patch; ++p) {
    for (int c = 0; c < out_channels; ++c) {
      grads.weights[static_cast<std::size_t>(c) * patch + p] =
          grad_wt[static_cast<std::size_t>(p) * out_channels + c];
    }
  }

  if (need_input_grad) {
    BasicTensor<T> grad_cols({patch, columns});
    gemm(true, false, patch, columns, out_channels, weights.data(), grad_mat.data(),
         grad_cols.data(), false);
    grads.input = col2im(grad_cols, batch, g);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// pooling

int pooled_extent(int size, const PoolWindow& window) {
  if (window.kernel < 1 || window.stride < 1 || window.pad < 0) {
    throw ShapeError("pooling: kernel and stride must be >= 1, pad >= 0");
  }
  const int span = size + 2 * window.pad - window.kernel;
  if (span < 0) {
    throw ShapeError("pooling: kernel " + std::to_string(window.kernel) + " exceeds padded extent " +
                     std::to_string(size + 2 * window.pad));
  }
  int ceil_div = (span + window.stride - 1) / window.stride;
  int out = ceil_div + 1;
  if (window.pad > 0 && (out - 1) * window.stride >= size + window.pad) --out;
  if (out < 1) {
    throw ShapeError("pooling: window " + std::to_string(window.kernel) + "/" +
                     std::to_string(window.stride) + " leaves no output for extent " +
                     std::to_string(size));
  }
  return out;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolWindow& window) {
  require_rank(input, 4, "maxpool input");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const int h = input.dim(2);
  const int w = input.dim(3);
  const int oh = pooled_extent(h, window);
  const int ow = pooled_extent(w, window);
  // Every window must overlap the input.
  for (int o = 0; o < std::max(oh, ow); ++o) {
    const int start = o * window.stride - window.pad;
    if ((o < oh && std::min(start + window.kernel, h) <= std::max(start, 0)) ||
        (o < ow && std::min(start + window.kernel, w) <= std::max(start, 0))) {
      throw ShapeError("maxpool: empty pooling window");
    }
  }

  MaxPoolResult<T> result{BasicTensor<T>({batch, channels, oh, ow}), {}};
  result.argmax.resize(result.output.size());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t o = 0;
  for (int nc = 0; nc < batch * channels; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * plane;
    const T* src = input.data() + base;
    for (int y = 0; y < oh; ++y) {
      const int y0 = std::max(y * window.stride - window.pad, 0);
      const int y1 = std::min(y * window.stride - window.pad + window.kernel, h);
      for (int x = 0; x < ow; ++x, ++o) {
        const int x0 = std::max(x * window.stride - window.pad, 0);
        const int x1 = std::min(x * window.stride - window.pad + window.kernel, w);
        std::size_t best = static_cast<std::size_t>(y0) * w + x0;
        T best_value = src[best];
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            const std::size_t idx = static_cast<std::size_t>(iy) * w + ix;
            if (src[idx] > best_value) {
              best_value = src[idx];
              best = idx;
            }
          }
        }
        result.output[o] = best_value;
        result.argmax[o] = base + best;
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool_backward(std::span<const std::size_t> argmax, const BasicTensor<T>& grad_out,
                                const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool_backward: " + std::to_string(argmax.size()) + " indices for " +
                     std::to_string(grad_out.size()) + " gradients");
  }
  if (input_shape.size() != 4 || grad_out.rank() != 4 || grad_out.dim(0) != input_shape[0] ||
      grad_out.dim(1) != input_shape[1]) {
    throw ShapeError("maxpool_backward: geometry mismatch " + shape_string(grad_out.shape()) +
                     " vs input " + shape_string(input_shape));
  }
  BasicTensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad_in.size()) throw ShapeError("maxpool_backward: index out of range");
    grad_in[argmax[i]] += grad_out[i];
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> avgpool_global_forward(const BasicTensor<T>& input) {
  require_rank(input, 4, "avgpool input");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const std::size_t plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  BasicTensor<T> out({batch, channels, 1, 1});
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    const T* src = input.data() + nc * plane;
    T sum = 0;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    out[nc] = sum / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
BasicTensor<T> avgpool_global_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  if (input_shape.size() != 4 ||
      grad_out.shape() != Shape{input_shape[0], input_shape[1], 1, 1}) {
    throw ShapeError("avgpool_backward: gradient " + shape_string(grad_out.shape()) +
                     " does not match input " + shape_string(input_shape));
  }
  BasicTensor<T> grad_in(input_shape);
  const std::size_t plane = static_cast<std::size_t>(input_shape[2]) * input_shape[3];
  for (std::size_t nc = 0; nc < grad_out.size(); ++nc) {
    const T share = grad_out[nc] / static_cast<T>(plane);
    std::fill_n(grad_in.data() + nc * plane, plane, share);
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.values()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  check_same_shape(input.shape(), grad_out.shape(), "relu_backward");
  BasicTensor<T> grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > T{0})) grad[i] = T{0};
  }
  return grad;
}

// ---------------------------------------------------------------------------
// fully connected

namespace {

template <typename T>
int fc_input_width(const BasicTensor<T>& input, const BasicTensor<T>& weights) {
  require_rank(weights, 2, "fc weights");
  if (input.rank() < 2) throw ShapeError("fc input must be at least rank 2");
  const int d = static_cast<int>(input.size() / static_cast<std::size_t>(input.dim(0)));
  if (d != weights.dim(1)) {
    throw ShapeError("fc: input width " + std::to_string(d) + " vs weights " +
                     shape_string(weights.shape()));
  }
  return d;
}

}  // namespace

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                          const BasicTensor<T>& bias) {
  const int d = fc_input_width(input, weights);
  const int n = input.dim(0);
  const int units = weights.dim(0);
  if (bias.size() != static_cast<std::size_t>(units)) {
    throw ShapeError("fc: bias has " + std::to_string(bias.size()) + " values for " +
                     std::to_string(units) + " units");
  }
  BasicTensor<T> out({n, units});
  gemm(false, true, n, units, d, input.data(), weights.data(), out.data(), false);
  for (int r = 0; r < n; ++r) {
    for (int u = 0; u < units; ++u) out.at(r, u) += bias[static_cast<std::size_t>(u)];
  }
  return out;
}

template <typename T>
ConvGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                         const BasicTensor<T>& grad_out, bool need_input_grad) {
  const int d = fc_input_width(input, weights);
  const int n = input.dim(0);
  const int units = weights.dim(0);
  check_same_shape(grad_out.shape(), Shape{n, units}, "fc_backward grad");
  ConvGrads<T> grads;
  grads.bias = BasicTensor<T>({units});
  for (int u = 0; u < units; ++u) {
    T sum = 0;
    for (int r = 0; r < n; ++r) sum += grad_out.at(r, u);
    grads.bias[static_cast<std::size_t>(u)] = sum;
  }
  grads.weights = BasicTensor<T>(weights.shape());
  gemm(true, false, units, d, n, grad_out.data(), input.data(), grads.weights.data(), false);
  if (need_input_grad) {
    grads.input = BasicTensor<T>(input.shape());
    gemm(false, false, n, d, units, grad_out.data(), weights.data(), grads.input.data(), false);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// concat

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const BasicTensor<T>& first = inputs.front();
  require_rank(first, 4, "concat input");
  int total = 0;
  for (const auto& t : inputs) {
    require_rank(t, 4, "concat input");
    if (t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw ShapeError("concat: " + shape_string(t.shape()) + " incompatible with " +
                       shape_string(first.shape()));
    }
    total += t.dim(1);
  }
  const int batch = first.dim(0);
  const std::size_t plane = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
  BasicTensor<T> out({batch, total, first.dim(2), first.dim(3)});
  for (int n = 0; n < batch; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * total * plane;
    for (const auto& t : inputs) {
      const std::size_t block = static_cast<std::size_t>(t.dim(1)) * plane;
      const T* src = t.data() + static_cast<std::size_t>(n) * block;
      dst = std::copy(src, src + block, dst);
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const int> channels) {
  require_rank(grad, 4, "split gradient");
  int total = 0;
  for (int c : channels) total += c;
  if (total != grad.dim(1)) {
    throw ShapeError("split: channel counts sum to " + std::to_string(total) + ", gradient has " +
                     std::to_string(grad.dim(1)));
  }
  const int batch = grad.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  std::vector<BasicTensor<T>> parts;
  parts.reserve(channels.size());
  for (int c : channels) parts.emplace_back(Shape{batch, c, grad.dim(2), grad.dim(3)});
  for (int n = 0; n < batch; ++n) {
    const T* src = grad.data() + static_cast<std::size_t>(n) * total * plane;
    for (auto& part : parts) {
      const std::size_t block = static_cast<std::size_t>(part.dim(1)) * plane;
      std::copy(src, src + block, part.data() + static_cast<std::size_t>(n) * block);
      src += block;
    }
  }
  return parts;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

namespace {

template <typename T>
void check_labels(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax logits");
  if (labels.size() != static_cast<std::size_t>(logits.dim(0))) {
    throw ShapeError("softmax: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.dim(0)) + " rows");
  }
  for (int label : labels) {
    if (label < 0 || label >= logits.dim(1)) {
      throw LabelError("label " + std::to_string(label) + " outside [0," +
                       std::to_string(logits.dim(1)) + ")");
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax logits");
  BasicTensor<T> probs(logits.shape());
  const int k = logits.dim(1);
  for (int r = 0; r < logits.dim(0); ++r) {
    T peak = logits.at(r, 0);
    for (int j = 1; j < k; ++j) peak = std::max(peak, logits.at(r, j));
    T total = 0;
    for (int j = 0; j < k; ++j) {
      probs.at(r, j) = std::exp(logits.at(r, j) - peak);
      total += probs.at(r, j);
    }
    for (int j = 0; j < k; ++j) probs.at(r, j) /= total;
  }
  return probs;
}

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  SoftmaxLoss<T> result{T{0}, BasicTensor<T>(logits.shape())};
  const int k = logits.dim(1);
  T total_loss = 0;
  for (int r = 0; r < logits.dim(0); ++r) {
    T peak = logits.at(r, 0);
    for (int j = 1; j < k; ++j) peak = std::max(peak, logits.at(r, j));
    T total = 0;
    for (int j = 0; j < k; ++j) {
      result.probs.at(r, j) = std::exp(logits.at(r, j) - peak);
      total += result.probs.at(r, j);
    }
    for (int j = 0; j < k; ++j) result.probs.at(r, j) /= total;
    // -log p_label = logsumexp - z_label
    total_loss += std::log(total) + peak - logits.at(r, labels[static_cast<std::size_t>(r)]);
  }
  result.loss = total_loss / static_cast<T>(logits.dim(0));
  return result;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& probs,
                                              std::span<const int> labels) {
  check_labels(probs, labels);
  BasicTensor<T> grad = probs;
  const T scale = T{1} / static_cast<T>(probs.dim(0));
  for (int r = 0; r < probs.dim(0); ++r) {
    grad.at(r, labels[static_cast<std::size_t>(r)]) -= T{1};
    for (int j = 0; j < probs.dim(1); ++j) grad.at(r, j) *= scale;
  }
  return grad;
}

#define FERNET_INSTANTIATE(T)                                                                   \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                         const BasicTensor<T>&, ConvStride);                   \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, ConvStride, bool);              \
  template MaxPoolResult<T> maxpool_forward(const BasicTensor<T>&, const PoolWindow&);         \
  template BasicTensor<T> maxpool_backward(std::span<const std::size_t>, const BasicTensor<T>&, \
                                           const Shape&);                                      \
  template BasicTensor<T> avgpool_global_forward(const BasicTensor<T>&);                       \
  template BasicTensor<T> avgpool_global_backward(const BasicTensor<T>&, const Shape&);        \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                 \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&);                                   \
  template ConvGrads<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                    const BasicTensor<T>&, bool);                              \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                    \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&,                   \
                                                      std::span<const int>);                   \
  template SoftmaxLoss<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);  \
  template BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>&,                \
                                                         std::span<const int>);                \
  template BasicTensor<T> softmax(const BasicTensor<T>&);

FERNET_INSTANTIATE(float)
FERNET_INSTANTIATE(double)
#undef FERNET_INSTANTIATE

}  // namespace fernet
