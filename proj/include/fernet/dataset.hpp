#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fernet/image.hpp"

namespace fernet {

/// Class indices follow the AN, DI, FE, HA, NE, SA, SU column order.
inline constexpr int kNumExpressions = 7;
inline constexpr std::array<std::string_view, kNumExpressions> kExpressionCodes{
    "AN", "DI", "FE", "HA", "NE", "SA", "SU"};

/// Class index of a two-letter code; nullopt when unknown. Case-sensitive
/// except that "Ne" is accepted for NE.
std::optional<int> expression_from_code(std::string_view code);
std::string_view expression_code(int label);

/// FER2013 emotion integer (0 Angry .. 6 Neutral) to class index.
int expression_from_fer2013(int emotion);

enum class Usage : std::uint8_t { unspecified, train, val, test };

std::string_view usage_name(Usage usage);  // "", "train", "val", "test"
std::optional<Usage> usage_from_name(std::string_view name);

struct Sample {
  GrayImage image;  // 48x48, values in [0, 1]
  int label = 0;
  std::string subject_id;
  std::string database_id;
  Usage usage = Usage::unspecified;

  /// database_id + '/' + subject_id, unique across databases.
  std::string qualified_subject() const { return database_id + "/" + subject_id; }
};

using LabelCounts = std::array<std::size_t, kNumExpressions>;

struct DatasetManifest {
  std::vector<Sample> samples;

  /// Per-database label tallies, recomputed from `samples`.
  std::map<std::string, LabelCounts> label_counts() const;
  /// Per-usage label tallies.
  std::map<Usage, LabelCounts> usage_counts() const;
  std::vector<std::string> databases() const;
};

/// Reads the FER2013 release CSV (header emotion,pixels,Usage). Usage
/// Training/PublicTest/PrivateTest maps to train/val/test. Each row becomes
/// its own subject. Throws ParseError with the 1-based file line.
DatasetManifest load_fer2013_csv(const std::filesystem::path& path);

/// Reads a manifest CSV (header path,label,subject_id,database_id,usage).
/// Image paths resolve relative to the manifest's directory; images are
/// decoded as 8-bit grayscale and center-square resized to 48x48.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Decodes an image file to [0,1] grayscale (color by luminance).
GrayImage read_gray_image(const std::filesystem::path& path);
/// Writes a [0,1] image as 8-bit PNG/PGM (by extension).
void write_gray_image(const std::filesystem::path& path, const GrayImage& image);

/// Prepared dataset directory: index.csv (label,subject_id,database_id,usage)
/// plus images.u8 holding 48*48 bytes per sample in index order.
void write_prepared(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest read_prepared(const std::filesystem::path& dir);

/// Writes `bytes` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace fernet
