#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fernet/image.hpp"

namespace fernet {

inline constexpr int kLandmarkCount = 49;

struct Point2 {
  double x = 0;
  double y = 0;
  bool operator==(const Point2&) const = default;
};

/// Exactly 49 finite facial landmarks in pixel coordinates.
class LandmarkSet {
 public:
  explicit LandmarkSet(std::vector<Point2> points);

  std::size_t size() const noexcept { return points_.size(); }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point2> points() const noexcept { return points_; }

  bool operator==(const LandmarkSet&) const = default;

 private:
  std::vector<Point2> points_;
};

/// Reads a landmark file: 49 lines of "x y". Throws ParseError naming the line.
LandmarkSet read_landmarks(const std::filesystem::path& path);

/// [a b tx; c d ty], mapping (x, y) to (a x + b y + tx, c x + d y + ty).
struct AffineTransform {
  double a = 1, b = 0, tx = 0;
  double c = 0, d = 1, ty = 0;

  static AffineTransform identity() { return {}; }
  Point2 apply(Point2 p) const { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }
  double determinant() const { return a * d - b * c; }
  /// Throws DegeneracyError when |det| <= 1e-12.
  AffineTransform inverse() const;
  /// this o other: apply `other` first.
  AffineTransform after(const AffineTransform& other) const;
};

/// Pointwise mean of corresponding landmarks. Throws DataError when empty.
LandmarkSet mean_shape(std::span<const LandmarkSet> sets);

/// Least-squares affine map taking `source` onto `target`, solved from the
/// normal equations in centered, scale-normalized coordinates. Throws
/// DegeneracyError when the source points are (nearly) collinear.
AffineTransform fit_affine(const LandmarkSet& source, const LandmarkSet& target);

/// Output pixel (x, y) samples the input at t^-1 (x, y) bilinearly; taps
/// outside the input read 0.
GrayImage warp_affine(const GrayImage& image, const AffineTransform& t, int out_height,
                      int out_width);

/// Square face window around a landmark configuration, snapped to whole
/// pixels in the source frame.
struct FaceRegion {
  int left = 0;
  int top = 0;
  int side = 1;

  /// Maps source coordinates onto a size x size output with the same
  /// half-pixel convention as resize_bilinear.
  AffineTransform to_output(int size = kFaceSize) const;
};

/// Square of side (1 + 2 * margin) * max(bbox width, bbox height), centered
/// on the landmark bounding box.
FaceRegion face_region(const LandmarkSet& shape, double margin = 0.25);

struct Registration {
  GrayImage face;             // size x size
  AffineTransform transform;  // input pixels -> output pixels
  double residual_px = 0;     // RMS landmark distance to the mean shape, output pixels
};

/// Aligns `landmarks` onto `mean` with an affine map and resamples the face
/// region of `mean` into a size x size image.
Registration register_face(const GrayImage& image, const LandmarkSet& landmarks,
                           const LandmarkSet& mean, const FaceRegion& region,
                           int size = kFaceSize);

}  // namespace fernet
