#include "fernet/registration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace fernet {

LandmarkSet::LandmarkSet(std::vector<Point2> points) : points_(std::move(points)) {
  if (points_.size() != kLandmarkCount) {
    throw DataError("landmark set needs " + std::to_string(kLandmarkCount) + " points, got " +
                    std::to_string(points_.size()));
  }
  for (const Point2& p : points_) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("non-finite landmark");
  }
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open landmark file " + path.string());
  std::vector<Point2> points;
  std::string line;
  std::size_t row = 0;
  std::size_t blank_tail = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      ++blank_tail;
      continue;
    }
    if (blank_tail > 0) throw ParseError(path.string() + ": blank line inside landmark list", row - 1);
    std::istringstream fields(line);
    Point2 p;
    std::string extra;
    if (!(fields >> p.x >> p.y) || (fields >> extra)) {
      throw ParseError(path.string() + ": expected 'x y'", row);
    }
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw ParseError(path.string() + ": non-finite coordinate", row);
    }
    points.push_back(p);
  }
  if (points.size() != kLandmarkCount) {
    throw ParseError(path.string() + ": expected " + std::to_string(kLandmarkCount) +
                         " landmarks, found " + std::to_string(points.size()),
                     row);
  }
  return LandmarkSet(std::move(points));
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  if (!(std::abs(det) > 1e-12)) throw DegeneracyError("affine transform is not invertible");
  AffineTransform inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

AffineTransform AffineTransform::after(const AffineTransform& o) const {
  AffineTransform r;
  r.a = a * o.a + b * o.c;
  r.b = a * o.b + b * o.d;
  r.tx = a * o.tx + b * o.ty + tx;
  r.c = c * o.a + d * o.c;
  r.d = c * o.b + d * o.d;
  r.ty = c * o.tx + d * o.ty + ty;
  return r;
}

LandmarkSet mean_shape(std::span<const LandmarkSet> sets) {
  if (sets.empty()) throw DataError("mean_shape of an empty list");
  std::vector<Point2> mean(kLandmarkCount);
  for (const LandmarkSet& s : sets) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i].x += s[i].x;
      mean[i].y += s[i].y;
    }
  }
  const double n = static_cast<double>(sets.size());
  for (Point2& p : mean) {
    p.x /= n;
    p.y /= n;
  }
  return LandmarkSet(std::move(mean));
}

AffineTransform fit_affine(const LandmarkSet& source, const LandmarkSet& target) {
  const std::size_t n = source.size();
  // Normalize the source: zero mean, unit RMS radius.
  double mx = 0, my = 0;
  for (const Point2& p : source.points()) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double spread = 0;
  for (const Point2& p : source.points()) {
    spread += (p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my);
  }
  const double scale = std::sqrt(spread / static_cast<double>(n));
  if (!(scale > 1e-12)) throw DegeneracyError("fit_affine: source landmarks coincide");

  // Normal equations for target = p*u + q*v + r. With centered (u, v) the
  // 3x3 system splits into a 2x2 block and r = mean(target).
  double suu = 0, suv = 0, svv = 0;
  double sux = 0, svx = 0, suy = 0, svy = 0;
  double tx_mean = 0, ty_mean = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (source[i].x - mx) / scale;
    const double v = (source[i].y - my) / scale;
    suu += u * u;
    suv += u * v;
    svv += v * v;
    sux += u * target[i].x;
    svx += v * target[i].x;
    suy += u * target[i].y;
    svy += v * target[i].y;
    tx_mean += target[i].x;
    ty_mean += target[i].y;
  }
  tx_mean /= static_cast<double>(n);
  ty_mean /= static_cast<double>(n);
  const double det = suu * svv - suv * suv;
  // suu + svv == n after normalization, so det / (n/2)^2 is scale-free.
  const double half = static_cast<double>(n) / 2.0;
  if (!(det / (half * half) > 1e-10)) {
    throw DegeneracyError("fit_affine: source landmarks are collinear");
  }
  const double p_x = (svv * sux - suv * svx) / det;
  const double q_x = (suu * svx - suv * sux) / det;
  const double p_y = (svv * suy - suv * svy) / det;
  const double q_y = (suu * svy - suv * suy) / det;

  AffineTransform t;
  t.a = p_x / scale;
  t.b = q_x / scale;
  t.tx = tx_mean - t.a * mx - t.b * my;
  t.c = p_y / scale;
  t.d = q_y / scale;
  t.ty = ty_mean - t.c * mx - t.d * my;
  return t;
}

GrayImage warp_affine(const GrayImage& image, const AffineTransform& t, int out_height,
                      int out_width) {
  const AffineTransform inv = t.inverse();
  GrayImage out(out_height, out_width);
  auto pixel = [&](int y, int x) -> double {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) return 0.0;
    return image.at(y, x);
  };
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx = std::floor(s.x);
      const double fy = std::floor(s.y);
      if (fx < -1.0 || fy < -1.0 || fx >= image.width || fy >= image.height) continue;
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const double ax = s.x - fx;
      const double ay = s.y - fy;
      const double top = (1.0 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1);
      const double bottom = (1.0 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1);
      out.at(y, x) = static_cast<float>((1.0 - ay) * top + ay * bottom);
    }
  }
  return out;
}

AffineTransform FaceRegion::to_output(int size) const {
  const double s = static_cast<double>(size) / side;
  AffineTransform t;
  t.a = s;
  t.d = s;
  t.tx = -(left - 0.5) * s - 0.5;
  t.ty = -(top - 0.5) * s - 0.5;
  return t;
}

FaceRegion face_region(const LandmarkSet& shape, double margin) {
  double x0 = shape[0].x, x1 = shape[0].x, y0 = shape[0].y, y1 = shape[0].y;
  for (const Point2& p : shape.points()) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double extent = std::max(x1 - x0, y1 - y0) * (1.0 + 2.0 * margin);
  FaceRegion region;
  region.side = std::max(1, static_cast<int>(std::lround(extent)));
  region.left = static_cast<int>(std::lround((x0 + x1) / 2.0 - region.side / 2.0));
  region.top = static_cast<int>(std::lround((y0 + y1) / 2.0 - region.side / 2.0));
  return region;
}

Registration register_face(const GrayImage& image, const LandmarkSet& landmarks,
                           const LandmarkSet& mean, const FaceRegion& region, int size) {
  const AffineTransform align = fit_affine(landmarks, mean);
  const AffineTransform frame = region.to_output(size);
  Registration r;
  r.transform = frame.after(align);
  r.face = warp_affine(image, r.transform, size, size);
  double sq = 0;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const Point2 got = r.transform.apply(landmarks[i]);
    const Point2 want = frame.apply(mean[i]);
    sq += (got.x - want.x) * (got.x - want.x) + (got.y - want.y) * (got.y - want.y);
  }
  r.residual_px = std::sqrt(sq / static_cast<double>(landmarks.size()));
  return r;
}

}  // namespace fernet
