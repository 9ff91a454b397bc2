#include "fernet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fernet {

std::optional<int> expression_from_code(std::string_view code) {
  if (code == "Ne") return 4;
  for (int i = 0; i < kNumExpressions; ++i) {
    if (kExpressionCodes[static_cast<std::size_t>(i)] == code) return i;
  }
  return std::nullopt;
}

std::string_view expression_code(int label) {
  if (label < 0 || label >= kNumExpressions) throw LabelError("label " + std::to_string(label) + " out of range");
  return kExpressionCodes[static_cast<std::size_t>(label)];
}

int expression_from_fer2013(int emotion) {
  // 0 Angry, 1 Disgust, 2 Fear, 3 Happy, 4 Sad, 5 Surprise, 6 Neutral
  static constexpr std::array<int, 7> kMap{0, 1, 2, 3, 5, 6, 4};
  if (emotion < 0 || emotion > 6) throw LabelError("FER2013 emotion " + std::to_string(emotion) + " outside 0-6");
  return kMap[static_cast<std::size_t>(emotion)];
}

std::string_view usage_name(Usage usage) {
  switch (usage) {
    case Usage::unspecified: return "";
    case Usage::train: return "train";
    case Usage::val: return "val";
    case Usage::test: return "test";
  }
  return "";
}

std::optional<Usage> usage_from_name(std::string_view name) {
  if (name.empty()) return Usage::unspecified;
  if (name == "train") return Usage::train;
  if (name == "val") return Usage::val;
  if (name == "test") return Usage::test;
  return std::nullopt;
}

std::map<std::string, LabelCounts> DatasetManifest::label_counts() const {
  std::map<std::string, LabelCounts> counts;
  for (const Sample& s : samples) {
    auto [it, inserted] = counts.try_emplace(s.database_id);
    if (inserted) it->second.fill(0);
    ++it->second[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

std::map<Usage, LabelCounts> DatasetManifest::usage_counts() const {
  std::map<Usage, LabelCounts> counts;
  for (const Sample& s : samples) {
    auto [it, inserted] = counts.try_emplace(s.usage);
    if (inserted) it->second.fill(0);
    ++it->second[static_cast<std::size_t>(s.label)];
  }
  return counts;
}

std::vector<std::string> DatasetManifest::databases() const {
  std::set<std::string> names;
  for (const Sample& s : samples) names.insert(s.database_id);
  return {names.begin(), names.end()};
}

namespace {

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

// Comma-separated fields; double quotes group a field ("" escapes a quote).
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  return fields;
}

std::string strip_bom(std::string line) {
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  return line;
}

Usage fer2013_usage(const std::string& value, std::size_t row) {
  if (value == "Training") return Usage::train;
  if (value == "PublicTest") return Usage::val;
  if (value == "PrivateTest") return Usage::test;
  if (value.empty()) return Usage::unspecified;
  throw ParseError("unknown Usage '" + value + "'", row);
}

}  // namespace

DatasetManifest load_fer2013_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file " + path.string(), 1);
  strip_cr(line);
  line = strip_bom(line);
  if (line != "emotion,pixels,Usage") {
    throw ParseError("expected header 'emotion,pixels,Usage', got '" + line + "'", 1);
  }
  constexpr std::size_t kPixels = static_cast<std::size_t>(kFaceSize) * kFaceSize;
  DatasetManifest manifest;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(fields.size()), row);

    int emotion = -1;
    const std::string& e = fields[0];
    auto [end, ec] = std::from_chars(e.data(), e.data() + e.size(), emotion);
    if (ec != std::errc{} || end != e.data() + e.size()) throw ParseError("bad emotion '" + e + "'", row);
    if (emotion < 0 || emotion > 6) throw ParseError("emotion " + e + " outside 0-6", row);

    std::vector<float> pixels;
    pixels.reserve(kPixels);
    const std::string& px = fields[1];
    const char* p = px.data();
    const char* stop = px.data() + px.size();
    while (p < stop) {
      while (p < stop && *p == ' ') ++p;
      if (p == stop) break;
      int value = 0;
      auto [next, perr] = std::from_chars(p, stop, value);
      if (perr != std::errc{} || value < 0 || value > 255 || (next < stop && *next != ' ')) {
        throw ParseError("bad pixel value", row);
      }
      pixels.push_back(static_cast<float>(value) / 255.0f);
      p = next;
    }
    if (pixels.size() != kPixels) {
      throw ParseError("expected " + std::to_string(kPixels) + " pixels, got " + std::to_string(pixels.size()), row);
    }
    Sample s;
    s.image = GrayImage(kFaceSize, kFaceSize, std::move(pixels));
    s.label = expression_from_fer2013(emotion);
    s.subject_id = "row" + std::to_string(row);
    s.database_id = "FER2013";
    s.usage = fer2013_usage(fields[2], row);
    manifest.samples.push_back(std::move(s));
  }
  return manifest;
}

GrayImage read_gray_image(const std::filesystem::path& path) {
  const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw DataError("cannot read image " + path.string());
  GrayImage image(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const unsigned char* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < mat.cols; ++x) image.at(y, x) = static_cast<float>(row[x]) / 255.0f;
  }
  return image;
}

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_gray_image(const std::filesystem::path& path, const GrayImage& image) {
  cv::Mat mat(image.height, image.width, CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    unsigned char* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < image.width; ++x) row[x] = to_byte(image.at(y, x));
  }
  if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write image " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty manifest " + path.string());
  strip_cr(line);
  line = strip_bom(line);
  if (line != "path,label,subject_id,database_id,usage") {
    throw DataError("manifest header must be 'path,label,subject_id,database_id,usage' (row 1)");
  }
  const std::filesystem::path base = path.parent_path();
  DatasetManifest manifest;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) -> void {
      throw DataError(path.string() + " row " + std::to_string(row) + ": " + why);
    };
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() == 4) fields.emplace_back();  // usage may be omitted
    if (fields.size() != 5) fail("expected 5 fields, got " + std::to_string(fields.size()));
    const std::optional<int> label = expression_from_code(fields[1]);
    if (!label) fail("unknown label '" + fields[1] + "'");
    const std::optional<Usage> usage = usage_from_name(fields[4]);
    if (!usage) fail("unknown usage '" + fields[4] + "'");
    if (fields[2].empty()) fail("empty subject_id");
    if (fields[3].empty()) fail("empty database_id");
    std::filesystem::path image_path(fields[0]);
    if (image_path.is_relative()) image_path = base / image_path;
    Sample s;
    try {
      s.image = center_square_resize(read_gray_image(image_path));
    } catch (const Error& e) {
      fail(e.what());
    }
    s.label = *label;
    s.subject_id = fields[2];
    s.database_id = fields[3];
    s.usage = *usage;
    manifest.samples.push_back(std::move(s));
  }
  return manifest;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char ch : value) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  return quoted + "\"";
}

}  // namespace

void write_prepared(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream index;
  index << "label,subject_id,database_id,usage\n";
  std::string pixels;
  pixels.reserve(manifest.samples.size() * kFaceSize * kFaceSize);
  for (const Sample& s : manifest.samples) {
    if (s.image.height != kFaceSize || s.image.width != kFaceSize) {
      throw ShapeError("prepared samples must be 48x48");
    }
    index << expression_code(s.label) << ',' << csv_field(s.subject_id) << ','
          << csv_field(s.database_id) << ',' << usage_name(s.usage) << '\n';
    for (float v : s.image.pixels) pixels.push_back(static_cast<char>(to_byte(v)));
  }
  write_file_atomic(dir / "images.u8", pixels);
  write_file_atomic(dir / "index.csv", index.str());
}

DatasetManifest read_prepared(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.csv");
  if (!index) throw DataError("cannot open " + (dir / "index.csv").string());
  std::ifstream images(dir / "images.u8", std::ios::binary);
  if (!images) throw DataError("cannot open " + (dir / "images.u8").string());
  std::string line;
  if (!std::getline(index, line)) throw DataError("empty prepared index");
  strip_cr(line);
  if (line != "label,subject_id,database_id,usage") throw DataError("bad prepared index header");
  constexpr std::size_t kPixels = static_cast<std::size_t>(kFaceSize) * kFaceSize;
  std::vector<unsigned char> buffer(kPixels);
  DatasetManifest manifest;
  std::size_t row = 1;
  while (std::getline(index, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() == 3) fields.emplace_back();
    if (fields.size() != 4) throw DataError("prepared index row " + std::to_string(row) + ": expected 4 fields");
    const std::optional<int> label = expression_from_code(fields[0]);
    const std::optional<Usage> usage = usage_from_name(fields[3]);
    if (!label || !usage) throw DataError("prepared index row " + std::to_string(row) + ": bad label or usage");
    images.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(kPixels));
    if (images.gcount() != static_cast<std::streamsize>(kPixels)) {
      throw DataError("images.u8 ends before index row " + std::to_string(row));
    }
    Sample s;
    std::vector<float> px(kPixels);
    for (std::size_t i = 0; i < kPixels; ++i) px[i] = static_cast<float>(buffer[i]) / 255.0f;
    s.image = GrayImage(kFaceSize, kFaceSize, std::move(px));
    s.label = *label;
    s.subject_id = fields[1];
    s.database_id = fields[2];
    s.usage = *usage;
    manifest.samples.push_back(std::move(s));
  }
  return manifest;
}

}  // namespace fernet
