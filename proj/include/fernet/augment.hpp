#pragma once

#include <array>
#include <vector>

#include "fernet/image.hpp"

namespace fernet {

inline constexpr int kCropSize = 40;
inline constexpr int kCropViews = 10;
/// The original image plus the ten crop views.
inline constexpr int kTrainingViews = kCropViews + 1;

struct CropOffset {
  int top;
  int left;
};

/// Four corners then center, for 40x40 crops of a 48x48 face.
inline constexpr std::array<CropOffset, 5> kCropOffsets{{{0, 0}, {0, 8}, {8, 0}, {8, 8}, {4, 4}}};

/// The ten crop views of a 48x48 face: for each offset in kCropOffsets the
/// crop resized back to 48x48, then its horizontal mirror.
std::vector<GrayImage> ten_crop(const GrayImage& image);

/// View `index` of a 48x48 face: 0 is the image itself, 1..10 are the
/// ten_crop views in order. Computes only the requested view.
GrayImage training_view(const GrayImage& image, int index);

}  // namespace fernet
