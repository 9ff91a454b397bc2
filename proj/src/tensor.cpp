#include "fernet/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "fernet/parallel.hpp"

namespace fernet {

std::size_t shape_volume(const Shape& shape) {
  std::size_t volume = 1;
  for (int extent : shape) volume *= static_cast<std::size_t>(extent);
  return volume;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (int extent : shape) {
    if (extent < 1) throw ShapeError("invalid tensor shape " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_volume(shape_), T{0});
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_volume(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value) {
  BasicTensor t(std::move(shape));
  t.fill(value);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_volume(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void require_rank(const BasicTensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// ---------------------------------------------------------------------------
// GEMM

namespace {

constexpr int kBlockN = 512;
constexpr int kBlockK = 128;

template <typename T>
std::vector<T> transposed(const T* src, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
    }
  }
  return out;
}

// C[rows i0..i1) += A * B with A [m,k], B [k,n] row-major. Zero A entries
// are skipped; c + 0*b == c for finite b, so this does not change results.
template <typename T>
void gemm_rows(int i0, int i1, int n, int k, const T* __restrict a, const T* __restrict b,
               T* __restrict c) {
  for (int j0 = 0; j0 < n; j0 += kBlockN) {
    const int jn = std::min(kBlockN, n - j0);
    for (int k0 = 0; k0 < k; k0 += kBlockK) {
      const int k1 = std::min(k, k0 + kBlockK);
      int i = i0;
      for (; i + 4 <= i1; i += 4) {
        T* __restrict c0 = c + static_cast<std::size_t>(i) * n + j0;
        T* __restrict c1 = c0 + n;
        T* __restrict c2 = c1 + n;
        T* __restrict c3 = c2 + n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int kk = k0; kk < k1; ++kk) {
          const T a0 = arow[kk];
          const T a1 = arow[kk + k];
          const T a2 = arow[kk + 2 * static_cast<std::size_t>(k)];
          const T a3 = arow[kk + 3 * static_cast<std::size_t>(k)];
          if (a0 == T{0} && a1 == T{0} && a2 == T{0} && a3 == T{0}) continue;
          const T* __restrict brow = b + static_cast<std::size_t>(kk) * n + j0;
          for (int j = 0; j < jn; ++j) {
            const T bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < i1; ++i) {
        T* __restrict crow = c + static_cast<std::size_t>(i) * n + j0;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int kk = k0; kk < k1; ++kk) {
          const T av = arow[kk];
          if (av == T{0}) continue;
          const T* __restrict brow = b + static_cast<std::size_t>(kk) * n + j0;
          for (int j = 0; j < jn; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T{0});
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> a_buf;
  std::vector<T> b_buf;
  if (trans_a) {
    a_buf = transposed(a, k, m);
    a = a_buf.data();
  }
  if (trans_b) {
    b_buf = transposed(b, n, k);
    b = b_buf.data();
  }
  const std::size_t groups = (static_cast<std::size_t>(m) + 3) / 4;
  const std::size_t work_per_group = static_cast<std::size_t>(n) * k * 4;
  const std::size_t min_groups = std::max<std::size_t>(1, (1u << 18) / std::max<std::size_t>(1, work_per_group));
  parallel_for(groups, min_groups, [&](std::size_t g0, std::size_t g1) {
    const int i0 = static_cast<int>(g0 * 4);
    const int i1 = std::min(m, static_cast<int>(g1 * 4));
    gemm_rows(i0, i1, n, k, a, b, c);
  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  BasicTensor<T> out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), out.data(), true);
  return out;
}

// ---------------------------------------------------------------------------
// im2col / col2im

int PatchGeometry::out_height() const { return (height + 2 * pad - kernel_h) / stride + 1; }
int PatchGeometry::out_width() const { return (width + 2 * pad - kernel_w) / stride + 1; }

void PatchGeometry::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ShapeError("patch geometry: empty input");
  if (kernel_h < 1 || kernel_w < 1 || stride < 1 || pad < 0) {
    throw ShapeError("patch geometry: kernel and stride must be >= 1, pad >= 0");
  }
  if (kernel_h > height + 2 * pad || kernel_w > width + 2 * pad) {
    throw ShapeError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " larger than padded input " + std::to_string(height + 2 * pad) + "x" +
                     std::to_string(width + 2 * pad));
  }
}

template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& input, int kernel_h, int kernel_w, int stride,
                      int pad) {
  require_rank(input, 4, "im2col input");
  const PatchGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel_h, kernel_w, stride, pad};
  g.validate();
  const int batch = input.dim(0);
  const int oh = g.out_height();
  const int ow = g.out_width();
  const std::size_t columns = static_cast<std::size_t>(batch) * oh * ow;
  BasicTensor<T> cols({g.channels * kernel_h * kernel_w, static_cast<int>(columns)});
  T* out = cols.data();
  const T* src = input.data();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < kernel_h; ++ki) {
      for (int kj = 0; kj < kernel_w; ++kj) {
        const std::size_t row = (static_cast<std::size_t>(c) * kernel_h + ki) * kernel_w + kj;
        T* dst = out + row * columns;
        for (int n = 0; n < batch; ++n) {
          const T* plane = src + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            T* line = dst + (static_cast<std::size_t>(n) * oh + oy) * ow;
            if (iy < 0 || iy >= g.height) {
              std::fill(line, line + ow, T{0});
              continue;
            }
            const T* in_row = plane + static_cast<std::size_t>(iy) * g.width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              line[ox] = (ix >= 0 && ix < g.width) ? in_row[ix] : T{0};
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, int batch, const PatchGeometry& g) {
  require_rank(cols, 2, "col2im cols");
  g.validate();
  const int oh = g.out_height();
  const int ow = g.out_width();
  const std::size_t columns = static_cast<std::size_t>(batch) * oh * ow;
  if (batch < 1 || cols.dim(0) != g.channels * g.kernel_h * g.kernel_w ||
      static_cast<std::size_t>(cols.dim(1)) != columns) {
    throw ShapeError("col2im: cols " + shape_string(cols.shape()) +
                     " inconsistent with geometry");
  }
  BasicTensor<T> image({batch, g.channels, g.height, g.width});
  T* dst = image.data();
  const T* src = cols.data();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel_h + ki) * g.kernel_w + kj;
        const T* line_src = src + row * columns;
        for (int n = 0; n < batch; ++n) {
          T* plane = dst + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.height) continue;
            const T* line = line_src + (static_cast<std::size_t>(n) * oh + oy) * ow;
            T* out_row = plane + static_cast<std::size_t>(iy) * g.width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.width) out_row[ix] += line[ox];
            }
          }
        }
      }
    }
  }
  return image;
}

#define FERNET_INSTANTIATE(T)                                                                 \
  template class BasicTensor<T>;                                                             \
  template void require_rank(const BasicTensor<T>&, int, const char*);                       \
  template void gemm(bool, bool, int, int, int, const T*, const T*, T*, bool);               \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> im2col(const BasicTensor<T>&, int, int, int, int);                 \
  template BasicTensor<T> col2im(const BasicTensor<T>&, int, const PatchGeometry&);

FERNET_INSTANTIATE(float)
FERNET_INSTANTIATE(double)
#undef FERNET_INSTANTIATE

}  // namespace fernet
