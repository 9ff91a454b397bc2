#pragma once

#include <vector>

#include "fernet/error.hpp"

namespace fernet {

inline constexpr int kFaceSize = 48;

/// Single-channel image, row-major, intensities normalized to [0, 1].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f);
  GrayImage(int h, int w, std::vector<float> values);

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Bilinear resize with half-pixel centers, edge-clamped. The sampling
/// tables are mirror-symmetric, so resizing a horizontally symmetric image
/// gives a bitwise symmetric result.
GrayImage resize_bilinear(const GrayImage& src, int out_height, int out_width);

GrayImage flip_horizontal(const GrayImage& src);

/// Sub-rectangle copy; throws ShapeError when it leaves the image.
GrayImage crop(const GrayImage& src, int top, int left, int height, int width);

/// Largest centered square, resized to size x size.
GrayImage center_square_resize(const GrayImage& src, int size = kFaceSize);

}  // namespace fernet
