#pragma once

#include <filesystem>
#include <string>

#include "fernet/network.hpp"

namespace fernet {

inline constexpr char kCheckpointMagic[4] = {'F', 'E', 'R', 'N'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Serialized checkpoint. Records: one "network" record holding the input
/// geometry and class count, one "layer:<name>" record per layer holding its
/// spec, then every parameter in network order. Values are stored as f32.
template <typename T>
std::string checkpoint_bytes(const Network<T>& net);

/// Parses bytes produced by checkpoint_bytes. Throws FormatError naming the
/// byte offset on bad magic, version, truncation, CRC or shape mismatch.
Network<float> parse_checkpoint(std::string_view bytes);

/// Atomic write (temporary file, then rename).
template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path);

Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace fernet
