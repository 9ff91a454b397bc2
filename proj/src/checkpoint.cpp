#include "fernet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "fernet/dataset.hpp"

namespace fernet {

namespace {

constexpr std::string_view kNetworkRecord = "network";
constexpr std::string_view kLayerPrefix = "layer:";
constexpr int kLayerFields = 11;

class Writer {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void record(std::string_view name, const Shape& shape, const std::vector<float>& values) {
    if (name.size() > 0xffff) throw ConfigError("record name too long: " + std::string(name));
    u16(static_cast<std::uint16_t>(name.size()));
    raw(name);
    u8(static_cast<std::uint8_t>(shape.size()));
    for (int e : shape) u32(static_cast<std::uint32_t>(e));
    for (float v : values) f32(v);
  }

  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_++]) << (8 * i));
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> values;
  std::size_t offset;
};

Record read_record(Reader& r) {
  Record rec;
  rec.offset = r.offset();
  const std::uint16_t name_len = r.u16("record name length");
  rec.name = std::string(r.raw(name_len, "record name"));
  const std::uint8_t rank = r.u8("record rank");
  if (rank == 0) throw FormatError("record '" + rec.name + "' has rank 0", r.offset() - 1);
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t e = r.u32("record extent");
    if (e == 0 || e > 0x7fffffffu) {
      throw FormatError("record '" + rec.name + "' has invalid extent " + std::to_string(e), at);
    }
    rec.shape.push_back(static_cast<int>(e));
    count *= e;
    if (count > r.remaining()) {
      throw FormatError("record '" + rec.name + "' declares more values than the file holds", at);
    }
  }
  if (count * 4 > r.remaining()) {
    throw FormatError("record '" + rec.name + "' declares " + std::to_string(count) +
                          " values but the payload is truncated",
                      r.offset());
  }
  rec.values.resize(static_cast<std::size_t>(count));
  for (float& v : rec.values) v = std::bit_cast<float>(r.u32("record value"));
  return rec;
}

std::vector<float> layer_fields(const LayerSpec& l) {
  const InceptionSpec& s = l.inception;
  return {static_cast<float>(l.kind), static_cast<float>(l.kernel), static_cast<float>(l.stride),
          static_cast<float>(l.pad), static_cast<float>(l.out_channels),
          static_cast<float>(s.n1x1), static_cast<float>(s.n3x3_reduce), static_cast<float>(s.n3x3),
          static_cast<float>(s.n5x5_reduce), static_cast<float>(s.n5x5),
          static_cast<float>(s.pool_proj)};
}

int as_int(float v, std::size_t offset) {
  if (!(v >= 0 && v <= 16777216.0f) || v != static_cast<float>(static_cast<int>(v))) {
    throw FormatError("config field is not a small nonnegative integer", offset);
  }
  return static_cast<int>(v);
}

LayerSpec layer_from_record(const Record& rec) {
  if (rec.shape != Shape{kLayerFields}) {
    throw FormatError("layer record '" + rec.name + "' must hold " + std::to_string(kLayerFields) +
                          " fields",
                      rec.offset);
  }
  LayerSpec l;
  l.name = rec.name.substr(kLayerPrefix.size());
  const int kind = as_int(rec.values[0], rec.offset);
  if (kind > static_cast<int>(LayerKind::softmax_loss)) {
    throw FormatError("layer record '" + rec.name + "' has unknown kind", rec.offset);
  }
  l.kind = static_cast<LayerKind>(kind);
  l.kernel = as_int(rec.values[1], rec.offset);
  l.stride = as_int(rec.values[2], rec.offset);
  l.pad = as_int(rec.values[3], rec.offset);
  l.out_channels = as_int(rec.values[4], rec.offset);
  l.inception = InceptionSpec{as_int(rec.values[5], rec.offset), as_int(rec.values[6], rec.offset),
                              as_int(rec.values[7], rec.offset), as_int(rec.values[8], rec.offset),
                              as_int(rec.values[9], rec.offset), as_int(rec.values[10], rec.offset)};
  return l;
}

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large files.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

template <typename T>
std::string checkpoint_bytes(const Network<T>& net) {
  const NetworkConfig& cfg = net.config();
  Writer w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(1 + cfg.layers.size() + net.parameters().size()));
  w.record(kNetworkRecord, {4},
           {static_cast<float>(cfg.input_channels), static_cast<float>(cfg.input_height),
            static_cast<float>(cfg.input_width), static_cast<float>(cfg.num_classes)});
  for (const LayerSpec& l : cfg.layers) {
    w.record(std::string(kLayerPrefix) + l.name, {kLayerFields}, layer_fields(l));
  }
  for (const Parameter<T>& p : net.parameters()) {
    std::vector<float> values(p.value.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(p.value[i]);
    w.record(p.name, p.value.shape(), values);
  }
  w.u32(crc_of(w.bytes()));
  return std::move(w.bytes());
}

Network<float> parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic (expected FERN)", 0);
  }
  if (bytes.size() < 4 + 1 + 4 + 4) throw FormatError("truncated header", bytes.size());
  Reader r(bytes, bytes.size() - 4);
  r.raw(4, "magic");
  const std::uint8_t version = r.u8("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32("record count");

  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) records.push_back(read_record(r));
  if (r.remaining() != 0) throw FormatError("unexpected bytes after the last record", r.offset());

  const std::size_t crc_at = bytes.size() - 4;
  Reader tail(bytes, bytes.size());
  tail.raw(crc_at, "body");
  const std::uint32_t stored = tail.u32("checksum");
  if (stored != crc_of(bytes.substr(0, crc_at))) throw FormatError("CRC32 mismatch", crc_at);

  if (records.empty() || records[0].name != kNetworkRecord || records[0].shape != Shape{4}) {
    throw FormatError("first record must be the network record", 9);
  }
  NetworkConfig cfg;
  cfg.input_channels = as_int(records[0].values[0], records[0].offset);
  cfg.input_height = as_int(records[0].values[1], records[0].offset);
  cfg.input_width = as_int(records[0].values[2], records[0].offset);
  cfg.num_classes = as_int(records[0].values[3], records[0].offset);
  std::size_t i = 1;
  for (; i < records.size() && records[i].name.starts_with(kLayerPrefix); ++i) {
    cfg.layers.push_back(layer_from_record(records[i]));
  }

  std::optional<Network<float>> net;
  try {
    net.emplace(Network<float>::zeros(cfg));
  } catch (const Error& e) {
    throw FormatError(std::string("stored network config is invalid: ") + e.what(), 9);
  }
  auto& params = net->parameters();
  if (records.size() - i != params.size()) {
    throw FormatError("expected " + std::to_string(params.size()) + " parameter records, found " +
                          std::to_string(records.size() - i),
                      i < records.size() ? records[i].offset : crc_at);
  }
  for (std::size_t p = 0; p < params.size(); ++p, ++i) {
    const Record& rec = records[i];
    if (rec.name != params[p].name) {
      throw FormatError("expected parameter '" + params[p].name + "', found '" + rec.name + "'",
                        rec.offset);
    }
    if (rec.shape != params[p].value.shape()) {
      throw FormatError("parameter '" + rec.name + "' has shape " + shape_string(rec.shape) +
                            ", network expects " + shape_string(params[p].value.shape()),
                        rec.offset);
    }
    std::copy(rec.values.begin(), rec.values.end(), params[p].value.data());
  }
  return std::move(*net);
}

template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_bytes(net));
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

template std::string checkpoint_bytes(const Network<float>&);
template std::string checkpoint_bytes(const Network<double>&);
template void save_checkpoint(const Network<float>&, const std::filesystem::path&);
template void save_checkpoint(const Network<double>&, const std::filesystem::path&);

}  // namespace fernet
