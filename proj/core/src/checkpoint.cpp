#include "n3dmm/checkpoint.hpp"

#include <fmt/format.h>

#include "n3dmm/binary_io.hpp"
#include "n3dmm/error.hpp"

namespace n3dmm {

namespace {
constexpr char kMagic[4] = {'N', '3', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::array(std::string_view name) const {
  if (const NamedArray* a = find(name)) return *a;
  throw DataError(fmt::format("checkpoint has no array '{}'", name));
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [key, value] : checkpoint.metadata) {
    w.put_string(key);
    w.put_string(value);
  }
  w.put(static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const NamedArray& a : checkpoint.arrays) {
    if (nn::numel(a.shape) != a.values.size()) {
      throw ShapeError(fmt::format("checkpoint array '{}' does not fill its shape", a.name));
    }
    w.put_string(a.name);
    w.put(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.put(static_cast<std::uint64_t>(d));
    w.put_all<double>(a.values);
  }
  w.put(fnv1a(w.bytes()));
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16) throw DataError("checkpoint too short");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  ByteReader tail(bytes.substr(bytes.size() - 8));
  if (tail.get<std::uint64_t>() != fnv1a(body)) throw DataError("checkpoint checksum mismatch");

  ByteReader r(body);
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) throw DataError("not a checkpoint file");
  if (const auto version = r.get<std::uint32_t>(); version != kVersion) {
    throw DataError(fmt::format("unsupported checkpoint version {}", version));
  }
  Checkpoint ck;
  const auto meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string key = r.get_string();
    ck.metadata[std::move(key)] = r.get_string();
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.get_string();
    a.shape.resize(r.get<std::uint32_t>());
    for (std::size_t& d : a.shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = nn::numel(a.shape);
    if (n * 8 > r.remaining()) throw DataError("checkpoint array exceeds file size");
    a.values.resize(n);
    for (double& v : a.values) v = r.get<double>();
    ck.arrays.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw DataError("trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_binary_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_binary_file(path));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace n3dmm
