#include <doctest.h>

#include <cmath>

#include "fernet/parallel.hpp"
#include "fernet/tensor.hpp"
#include "synthetic.hpp"

using namespace fernet;

namespace {

Tensor64 random64(Shape shape, Rng& rng) {
  Tensor64 t(std::move(shape));
  for (double& v : t.values()) v = 2 * uniform_unit(rng) - 1;
  return t;
}

Tensor random32(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(2 * uniform_unit(rng) - 1);
  return t;
}

// Textbook triple loop.
Tensor64 naive_matmul(const Tensor64& a, const Tensor64& b) {
  Tensor64 c({a.dim(0), b.dim(1)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < b.dim(1); ++j) {
      double s = 0;
      for (int k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

// Direct patch gather: row (c, ky, kx), column (n, oy, ox).
Tensor64 naive_im2col(const Tensor64& x, int kh, int kw, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  Tensor64 cols({c * kh * kw, n * oh * ow});
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx)
        for (int b = 0; b < n; ++b)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const int y = oy * stride - pad + ky;
              const int xx = ox * stride - pad + kx;
              const double v = (y < 0 || y >= h || xx < 0 || xx >= w) ? 0.0 : x.at(b, ci, y, xx);
              cols.at((ci * kh + ky) * kw + kx, (b * oh + oy) * ow + ox) = v;
            }
  return cols;
}

double dot(const Tensor64& a, const Tensor64& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("tensor_zeros allocates zeros and rejects degenerate shapes") {
  const Tensor t = tensor_zeros<float>({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  for (float v : t.values()) CHECK(v == 0.0f);
  CHECK(tensor_zeros<float>({1, 1, 48, 48}).size() == 2304);
  CHECK_THROWS_AS(tensor_zeros<float>({0}), ShapeError);
  CHECK_THROWS_AS(tensor_zeros<float>({}), ShapeError);
  CHECK_THROWS_AS(tensor_zeros<float>({3, -1}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("matmul small cases") {
  Tensor64 eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
  const Tensor64 b({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(eye, b) == b);
  const Tensor64 a({2, 2}, {1, 2, 3, 4});
  const Tensor64 c({2, 1}, {5, 6});
  CHECK(matmul(a, c) == Tensor64({2, 1}, {17, 39}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("identity is exact on both sides") {
  Rng rng(3);
  const Tensor64 a = random64({4, 6}, rng);
  Tensor64 left({4, 4}), right({6, 6});
  for (int i = 0; i < 4; ++i) left.at(i, i) = 1;
  for (int i = 0; i < 6; ++i) right.at(i, i) = 1;
  CHECK(matmul(left, a) == a);
  CHECK(matmul(a, right) == a);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(uniform_index(rng, 13));
    const int k = 1 + static_cast<int>(uniform_index(rng, 140));
    const int n = 1 + static_cast<int>(uniform_index(rng, 600));
    const Tensor64 a = random64({m, k}, rng);
    const Tensor64 b = random64({k, n}, rng);
    const Tensor64 got = matmul(a, b);
    const Tensor64 want = naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(std::abs(got[i] - want[i]) <= 1e-12 * std::max(1.0, std::abs(want[i])));
    }
  }
  const Tensor64 a = random64({7, 5}, rng);
  const Tensor64 b = random64({5, 9}, rng);
  const Tensor64 got = matmul(a, b);
  const Tensor64 want = naive_matmul(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got[i] - want[i]) <= 1e-6 * std::max(1e-12, std::abs(want[i])));
  }
}

TEST_CASE("gemm transposes and accumulation") {
  Rng rng(5);
  const Tensor64 a = random64({6, 4}, rng);   // used as A or A^T
  const Tensor64 b = random64({4, 5}, rng);
  const Tensor64 bt = random64({5, 4}, rng);
  const Tensor64 at = random64({4, 6}, rng);

  auto transpose = [](const Tensor64& t) {
    Tensor64 r({t.dim(1), t.dim(0)});
    for (int i = 0; i < t.dim(0); ++i)
      for (int j = 0; j < t.dim(1); ++j) r.at(j, i) = t.at(i, j);
    return r;
  };
  auto close = [](const Tensor64& x, const Tensor64& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::abs(x[i] - y[i]) > 1e-12) return false;
    return true;
  };

  Tensor64 c({6, 5});
  gemm(false, true, 6, 5, 4, a.data(), bt.data(), c.data(), false);
  CHECK(close(c, naive_matmul(a, transpose(bt))));
  gemm(true, false, 6, 5, 4, at.data(), b.data(), c.data(), false);
  CHECK(close(c, naive_matmul(transpose(at), b)));
  gemm(true, true, 6, 5, 4, at.data(), bt.data(), c.data(), false);
  CHECK(close(c, naive_matmul(transpose(at), transpose(bt))));

  Tensor64 acc = Tensor64::filled({6, 5}, 1.0);
  gemm(false, false, 6, 5, 4, a.data(), b.data(), acc.data(), true);
  const Tensor64 ab = naive_matmul(a, b);
  for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(ab[i] + 1.0).epsilon(1e-12));
}

TEST_CASE("matmul is bitwise identical across thread counts and repeated calls") {
  Rng rng(9);
  const Tensor a = random32({37, 300}, rng);
  const Tensor b = random32({300, 1500}, rng);
  set_parallelism(1);
  const Tensor one = matmul(a, b);
  CHECK(matmul(a, b) == one);
  set_parallelism(4);
  const Tensor four = matmul(a, b);
  set_parallelism(3);
  const Tensor three = matmul(a, b);
  set_parallelism(1);
  CHECK(four == one);
  CHECK(three == one);
}

TEST_CASE("matmul leaves its inputs untouched") {
  Rng rng(1);
  const Tensor64 a = random64({3, 4}, rng);
  const Tensor64 b = random64({4, 2}, rng);
  const Tensor64 a0 = a, b0 = b;
  (void)matmul(a, b);
  CHECK(a == a0);
  CHECK(b == b0);
}

TEST_CASE("im2col geometry") {
  const Tensor x = Tensor::zeros({1, 1, 48, 48});
  const Tensor cols = im2col(x, 7, 7, 2, 3);
  CHECK(cols.shape() == Shape{49, 24 * 24});

  Tensor64 small({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor64 one = im2col(small, 3, 3, 1, 0);
  CHECK(one.shape() == Shape{9, 1});
  for (int i = 0; i < 9; ++i) CHECK(one[static_cast<std::size_t>(i)] == i + 1);

  CHECK_THROWS_AS(im2col(small, 7, 7, 1, 1), ShapeError);
}

TEST_CASE("im2col matches the direct patch gather") {
  Rng rng(21);
  struct G { int c, h, w, k, s, p; };
  for (G g : {G{1, 5, 5, 3, 1, 1}, G{2, 7, 6, 3, 2, 0}, G{3, 9, 8, 5, 2, 2}, G{2, 6, 6, 7, 2, 3}}) {
    const Tensor64 x = random64({2, g.c, g.h, g.w}, rng);
    CHECK(im2col(x, g.k, g.k, g.s, g.p) == naive_im2col(x, g.k, g.k, g.s, g.p));
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(4);
  struct G { int n, c, h, w, k, s, p; };
  // Includes the convolution geometries of the full network.
  for (G g : {G{1, 1, 5, 5, 3, 1, 1}, G{2, 1, 48, 48, 7, 2, 3}, G{1, 3, 12, 12, 3, 1, 1},
              G{2, 4, 6, 6, 5, 1, 2}, G{1, 2, 6, 6, 1, 1, 0}, G{2, 2, 9, 7, 3, 2, 1}}) {
    const Tensor64 x = random64({g.n, g.c, g.h, g.w}, rng);
    const Tensor64 cols = im2col(x, g.k, g.k, g.s, g.p);
    const Tensor64 y = random64(cols.shape(), rng);
    const PatchGeometry geo{g.c, g.h, g.w, g.k, g.k, g.s, g.p};
    const double lhs = dot(cols, y);
    const double rhs = dot(x, col2im(y, g.n, geo));
    CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("col2im simple cases") {
  Rng rng(8);
  const Tensor64 x = random64({2, 3, 4, 5}, rng);
  const PatchGeometry id{3, 4, 5, 1, 1, 1, 0};
  CHECK(col2im(im2col(x, 1, 1, 1, 0), 2, id) == x);

  const PatchGeometry disjoint{1, 4, 4, 2, 2, 2, 0};
  const Tensor64 ones = col2im(Tensor64::filled({4, 4}, 1.0), 1, disjoint);
  for (double v : ones.values()) CHECK(v == 1.0);

  const Tensor64 zero = col2im(Tensor64({4, 4}), 1, disjoint);
  for (double v : zero.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(col2im(Tensor64({4, 5}), 1, disjoint), ShapeError);
}

TEST_CASE("reshape and cast") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r[5] == 6.0f);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  const Tensor64 d = t.cast<double>();
  CHECK(d[4] == 5.0);
}
