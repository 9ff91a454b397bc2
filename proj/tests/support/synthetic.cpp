#include "synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <numbers>

#include <unistd.h>

namespace fernet::testing {

double normal(Rng& rng) {
  const double u1 = 1.0 - uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

GrayImage random_image(Rng& rng, int height, int width) {
  GrayImage img(height, width);
  for (float& v : img.pixels) v = static_cast<float>(uniform_unit(rng));
  return img;
}

GrayImage bar_image(int cls, Rng& rng, double noise) {
  const double theta = 15.0 * cls * std::numbers::pi / 180.0;
  const double cx = 23.5 + 6.0 * (uniform_unit(rng) - 0.5);
  const double cy = 23.5 + 6.0 * (uniform_unit(rng) - 0.5);
  const double half_width = 1.5;
  GrayImage img(kFaceSize, kFaceSize);
  for (int y = 0; y < kFaceSize; ++y) {
    for (int x = 0; x < kFaceSize; ++x) {
      double ink = 0;
      for (double sign : {1.0, -1.0}) {
        // direction (sin, cos) measured from vertical; distance to the line
        const double dx = sign * std::sin(theta);
        const double dy = std::cos(theta);
        const double dist = std::abs((x - cx) * dy - (y - cy) * dx);
        ink = std::max(ink, std::clamp(half_width + 0.5 - dist, 0.0, 1.0));
      }
      const double v = 0.2 + 0.8 * ink + noise * normal(rng);
      img.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

std::vector<Sample> bar_samples(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.label = i % kNumExpressions;
    s.image = bar_image(s.label, rng);
    s.subject_id = "s" + std::to_string(i);
    s.database_id = "bars";
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest synthetic_manifest(int n, int subjects, int databases, std::uint64_t seed) {
  Rng rng(seed);
  DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    Sample s;
    const int subject = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(subjects)));
    s.subject_id = "subj" + std::to_string(subject);
    s.database_id = "db" + std::to_string(subject % databases);
    s.label = static_cast<int>(uniform_index(rng, kNumExpressions));
    s.image = random_image(rng);
    m.samples.push_back(std::move(s));
  }
  return m;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(&s);
  return out;
}

NetworkConfig small_config(int num_classes) {
  FerNetOptions o;
  o.width_divisor = 8;
  o.fc7_units = 512;
  o.fc8_units = 256;
  o.num_classes = num_classes;
  return fer_network_config(o);
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("fernet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fernet::testing
