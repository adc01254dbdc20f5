#include "n3dmm/binary_io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "n3dmm/error.hpp"

namespace n3dmm {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteReader::require(std::size_t n) const {
  if (pos_ + n > bytes_.size()) {
    throw DataError(fmt::format("truncated binary data: need {} bytes at offset {}, have {}", n,
                                pos_, bytes_.size() - pos_));
  }
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(fmt::format("failed writing '{}'", path.string()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace n3dmm
