#include "fernet/augment.hpp"

#include <string>

namespace fernet {

namespace {

void require_face(const GrayImage& image) {
  if (image.height != kFaceSize || image.width != kFaceSize) {
    throw ShapeError("augmentation expects a 48x48 image, got " + std::to_string(image.height) +
                     "x" + std::to_string(image.width));
  }
}

GrayImage crop_view(const GrayImage& image, int crop_index) {
  const CropOffset& o = kCropOffsets[static_cast<std::size_t>(crop_index)];
  return resize_bilinear(crop(image, o.top, o.left, kCropSize, kCropSize), kFaceSize, kFaceSize);
}

}  // namespace

std::vector<GrayImage> ten_crop(const GrayImage& image) {
  require_face(image);
  std::vector<GrayImage> views;
  views.reserve(kCropViews);
  for (int i = 0; i < static_cast<int>(kCropOffsets.size()); ++i) {
    GrayImage view = crop_view(image, i);
    GrayImage mirrored = flip_horizontal(view);
    views.push_back(std::move(view));
    views.push_back(std::move(mirrored));
  }
  return views;
}

GrayImage training_view(const GrayImage& image, int index) {
  require_face(image);
  if (index < 0 || index >= kTrainingViews) {
    throw RangeError("view index " + std::to_string(index) + " outside [0," +
                     std::to_string(kTrainingViews) + ")");
  }
  if (index == 0) return image;
  const int crop_index = (index - 1) / 2;
  GrayImage view = crop_view(image, crop_index);
  return (index - 1) % 2 == 0 ? view : flip_horizontal(view);
}

}  // namespace fernet
