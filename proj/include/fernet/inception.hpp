#pragma once

#include <array>
#include <cstdint>

#include "fernet/layers.hpp"

namespace fernet {

/// Channel widths of one Inception block.
struct InceptionSpec {
  int n1x1 = 0;
  int n3x3_reduce = 0;
  int n3x3 = 0;
  int n5x5_reduce = 0;
  int n5x5 = 0;
  int pool_proj = 0;

  int out_channels() const { return n1x1 + n3x3 + n5x5 + pool_proj; }
  void validate() const;  // ConfigError on any width < 1
  bool operator==(const InceptionSpec&) const = default;
};

/// The six convolutions of a block, in parameter order.
enum class InceptionConv : std::uint8_t {
  conv1x1 = 0,
  reduce3x3 = 1,
  conv3x3 = 2,
  reduce5x5 = 3,
  conv5x5 = 4,
  pool_proj = 5,
};
inline constexpr int kInceptionConvs = 6;

const char* inception_conv_name(InceptionConv conv);

/// Kernel size and padding of one inception convolution (stride is always 1).
struct InceptionConvShape {
  int in_channels;
  int out_channels;
  int kernel;
  int pad;
};
InceptionConvShape inception_conv_shape(const InceptionSpec& spec, int in_channels,
                                        InceptionConv conv);

template <typename T>
struct ConvWeightsView {
  const BasicTensor<T>* weight = nullptr;
  const BasicTensor<T>* bias = nullptr;
};

template <typename T>
using InceptionWeights = std::array<ConvWeightsView<T>, kInceptionConvs>;

template <typename T>
struct InceptionCache {
  BasicTensor<T> input;
  BasicTensor<T> reduce3;    // post-ReLU
  BasicTensor<T> reduce5;    // post-ReLU
  BasicTensor<T> pooled;     // 3x3/1 max-pool of the input
  std::vector<std::size_t> pool_argmax;
  std::array<BasicTensor<T>, 4> branch_out;  // post-ReLU: 1x1, 3x3, 5x5, proj
};

template <typename T>
struct InceptionResult {
  BasicTensor<T> output;
  InceptionCache<T> cache;
};

template <typename T>
struct InceptionGrads {
  BasicTensor<T> input;
  std::array<BasicTensor<T>, kInceptionConvs> weights;
  std::array<BasicTensor<T>, kInceptionConvs> biases;
};

/// Four parallel branches, each convolution followed by ReLU:
/// 1x1 | 1x1 reduce -> 3x3 (pad 1) | 1x1 reduce -> 5x5 (pad 2) |
/// 3x3/1 max-pool (pad 1) -> 1x1 projection; concatenated on channels.
template <typename T>
InceptionResult<T> inception_forward(const BasicTensor<T>& input, const InceptionSpec& spec,
                                     const InceptionWeights<T>& weights);

template <typename T>
InceptionGrads<T> inception_backward(const InceptionCache<T>& cache, const InceptionSpec& spec,
                                     const InceptionWeights<T>& weights,
                                     const BasicTensor<T>& grad_out, bool need_input_grad = true);

}  // namespace fernet
