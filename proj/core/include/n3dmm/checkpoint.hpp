#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "n3dmm/tensor.hpp"

namespace n3dmm {

struct NamedArray {
  std::string name;
  nn::Shape shape;
  std::vector<double> values;
};

// Parameter checkpoint. Layout (little-endian):
//   "N3CK", u32 version,
//   u32 metadata count, then (u32 len, key bytes, u32 len, value bytes) pairs,
//   u32 array count, then per array: u32 name length, name, u32 rank,
//     rank x u64 dims, float64 payload,
//   u64 FNV-1a checksum of every preceding byte.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedArray> arrays;

  const NamedArray& array(std::string_view name) const;
  const NamedArray* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace n3dmm
