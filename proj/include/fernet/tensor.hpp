#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fernet/error.hpp"

namespace fernet {

/// Tensor extents. Activations use (batch, channels, height, width).
using Shape = std::vector<int>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. `float` is the working precision; `double` exists
/// for finite-difference gradient checks.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  /// Zero-filled tensor. Throws ShapeError on an empty shape or extent < 1.
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor filled(Shape shape, T value);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors for (n, c, h, w) tensors.
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
  // 2-D accessors for (rows, cols) tensors.
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }

  /// Same values under a new shape of equal volume.
  BasicTensor reshaped(Shape shape) const;

  void fill(T value);

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
BasicTensor<T> tensor_zeros(Shape shape) {
  return BasicTensor<T>(std::move(shape));
}

/// Throws ShapeError unless `t` has the given rank.
template <typename T>
void require_rank(const BasicTensor<T>& t, int rank, const char* what);

/// Plain matrix product of rank-2 tensors [m,k] x [k,n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Row-major GEMM on raw buffers: C[m,n] = op(A) op(B) (+ C when
/// `accumulate`). op transposes when the flag is set; A is stored [m,k] or
/// [k,m], B is stored [k,n] or [n,k]. Each C element sums its k terms in
/// ascending order, independent of blocking and parallelism.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate);

/// Geometry shared by im2col/col2im and the convolution layers.
struct PatchGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const;  // floor convention
  int out_width() const;
  /// Throws ShapeError when the kernel does not fit the padded input.
  void validate() const;
};

/// Unfolds [n,c,h,w] into [c*kh*kw, n*oh*ow]. Column index is
/// (image * oh + oy) * ow + ox; padded taps read 0.
template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& input, int kernel_h, int kernel_w, int stride, int pad);

/// Adjoint of im2col: scatters-and-sums columns back into [n,c,h,w].
template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, int batch, const PatchGeometry& geometry);

}  // namespace fernet
