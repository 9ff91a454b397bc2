#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fernet/tensor.hpp"

namespace fernet {

// Stateless layer kernels. Every forward has a matching backward that is the
// exact adjoint of the forward map (checked by finite differences in tests).

struct ConvStride {
  int stride = 1;
  int pad = 0;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

/// Cross-correlation of [n,c,h,w] with [oc,c,kh,kw] plus per-channel bias.
/// Output extents use the floor convention.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, ConvStride geometry);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_out, ConvStride geometry,
                             bool need_input_grad = true);

struct PoolWindow {
  int kernel = 3;
  int stride = 2;
  int pad = 0;
};

/// Pooled extent with the ceiling convention. The last window must start
/// inside the (left-padded) input.
int pooled_extent(int size, const PoolWindow& window);

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Max over each window; padded taps never win. Ties pick the lowest flat index.
template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolWindow& window);

template <typename T>
BasicTensor<T> maxpool_backward(std::span<const std::size_t> argmax, const BasicTensor<T>& grad_out,
                                const Shape& input_shape);

template <typename T>
BasicTensor<T> avgpool_global_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> avgpool_global_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

/// Passes grad_out where input > 0. A ReLU output works as the mask too.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

/// x W^T + b for x [n,d] (or any [n,...] flattened to d), W [u,d], b [u].
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                          const BasicTensor<T>& bias);

template <typename T>
ConvGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                         const BasicTensor<T>& grad_out, bool need_input_grad = true);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs);

/// Splits a [n, sum(c_i), h, w] gradient into per-input slices.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const int> channels);

template <typename T>
struct SoftmaxLoss {
  T loss = 0;  // mean over the batch
  BasicTensor<T> probs;
};

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// (probs - onehot) / n
template <typename T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& probs,
                                              std::span<const int> labels);

/// Row-wise stabilized softmax without a loss.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

}  // namespace fernet
