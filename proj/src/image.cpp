#include "fernet/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fernet {

GrayImage::GrayImage(int h, int w, float fill) : height(h), width(w) {
  if (h < 1 || w < 1) throw ShapeError("image extents must be >= 1");
  pixels.assign(static_cast<std::size_t>(h) * w, fill);
}

GrayImage::GrayImage(int h, int w, std::vector<float> values)
    : height(h), width(w), pixels(std::move(values)) {
  if (h < 1 || w < 1) throw ShapeError("image extents must be >= 1");
  if (pixels.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " needs " +
                     std::to_string(static_cast<std::size_t>(h) * w) + " pixels, got " +
                     std::to_string(pixels.size()));
  }
}

namespace {

struct Tap {
  int i0;
  float w0;
  int i1;
  float w1;
};

std::vector<Tap> sampling_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  const int half = (out + 1) / 2;
  for (int d = 0; d < half; ++d) {
    double s = (d + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, in - 1);
    const float frac = static_cast<float>(s - i0);
    taps[static_cast<std::size_t>(d)] = {i0, 1.0f - frac, i1, frac};
  }
  for (int d = half; d < out; ++d) {
    const Tap& m = taps[static_cast<std::size_t>(out - 1 - d)];
    taps[static_cast<std::size_t>(d)] = {in - 1 - m.i1, m.w1, in - 1 - m.i0, m.w0};
  }
  return taps;
}

}  // namespace

GrayImage resize_bilinear(const GrayImage& src, int out_height, int out_width) {
  if (src.height < 1 || src.width < 1) throw ShapeError("resize: empty image");
  if (out_height < 1 || out_width < 1) throw ShapeError("resize: output extents must be >= 1");
  const std::vector<Tap> cols = sampling_taps(src.width, out_width);
  const std::vector<Tap> rows = sampling_taps(src.height, out_height);
  GrayImage horizontal(src.height, out_width);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Tap& t = cols[static_cast<std::size_t>(x)];
      horizontal.at(y, x) = t.w0 * src.at(y, t.i0) + t.w1 * src.at(y, t.i1);
    }
  }
  GrayImage out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    const Tap& t = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_width; ++x) {
      out.at(y, x) = t.w0 * horizontal.at(t.i0, x) + t.w1 * horizontal.at(t.i1, x);
    }
  }
  return out;
}

GrayImage flip_horizontal(const GrayImage& src) {
  GrayImage out = src;
  for (int y = 0; y < src.height; ++y) {
    auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * src.width;
    std::reverse(row, row + src.width);
  }
  return out;
}

GrayImage crop(const GrayImage& src, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > src.height ||
      left + width > src.width) {
    throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") outside " +
                     std::to_string(src.height) + "x" + std::to_string(src.width) + " image");
  }
  GrayImage out(height, width);
  for (int y = 0; y < height; ++y) {
    const float* from = &src.pixels[static_cast<std::size_t>(top + y) * src.width + left];
    std::copy(from, from + width, &out.pixels[static_cast<std::size_t>(y) * width]);
  }
  return out;
}

GrayImage center_square_resize(const GrayImage& src, int size) {
  const int side = std::min(src.height, src.width);
  const GrayImage square =
      crop(src, (src.height - side) / 2, (src.width - side) / 2, side, side);
  if (side == size) return square;
  return resize_bilinear(square, size, size);
}

}  // namespace fernet
