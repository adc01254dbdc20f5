#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "n3dmm/mesh.hpp"
#include "n3dmm/topology.hpp"

namespace n3dmm {

// Spiral entry that does not refer to a vertex; reads as an all-zero feature row.
inline constexpr std::int32_t kPad = -1;

enum class Orientation : std::uint8_t { counterclockwise = 0, clockwise = 1 };

enum class OrderingMode : std::uint8_t {
  fixed = 0,
  rand_mesh = 1,
  rand_epoch = 2,
  rand_mesh_and_epoch = 3,
};

std::string to_string(Orientation o);
std::string to_string(OrderingMode mode);
Orientation parse_orientation(const std::string& text);
OrderingMode parse_ordering_mode(const std::string& text);

struct SpiralConfig {
  int hops = 1;
  // Spiral length including the centre vertex. 0 selects the data-driven
  // default (see default_spiral_length).
  int length = 0;
  int dilation = 1;
  int reference_vertex = 0;
  Orientation orientation = Orientation::counterclockwise;
  OrderingMode ordering_mode = OrderingMode::fixed;
  std::uint64_t seed = 0;

  bool operator==(const SpiralConfig&) const = default;
};

// m x L spiral indices, row-major, kPad for missing entries.
struct SpiralTable {
  int vertex_count = 0;
  int length = 0;
  std::vector<std::int32_t> indices;
  SpiralConfig config;  // with `length` resolved
  std::uint64_t template_hash = 0;

  std::span<const std::int32_t> row(int v) const {
    return {indices.data() + static_cast<std::size_t>(v) * length, static_cast<std::size_t>(length)};
  }
  std::uint64_t checksum() const;
};

// argmin over the 1-ring of x of the distance to the reference vertex,
// ties going to the smallest vertex index.
int reference_start(const Topology& topology, std::span<const double> geodesic_from_reference, int x);

// 1 + the largest number of vertices within `hops` rings of any vertex,
// divided (rounding up) by the dilation stride.
int default_spiral_length(const Topology& topology, int hops, int dilation = 1);

// Keeps entries 0, r, 2r, ... of `spiral` until `length` entries are taken,
// padding with kPad if the input runs out.
std::vector<std::int32_t> dilate(std::span<const std::int32_t> spiral, int stride, int length);

// Single spiral of config.length entries (resolved with the default rule when 0).
// Randomised ordering modes draw the 1-ring start from config.seed.
std::vector<std::int32_t> build_spiral(const Mesh& mesh, const Topology& topology,
                                       const SpiralConfig& config, int x);

SpiralTable build_spiral_table(const Mesh& mesh, const Topology& topology, const SpiralConfig& config);

// Reusable spiral construction for one template: caches the topology and the
// reference-vertex distances so that the randomised ordering modes can
// regenerate tables cheaply per mesh and per epoch.
class SpiralGenerator {
 public:
  SpiralGenerator(const Mesh& mesh, SpiralConfig config);

  const SpiralConfig& config() const { return config_; }
  const SpiralTable& fixed_table() const { return fixed_; }
  bool randomized() const { return config_.ordering_mode != OrderingMode::fixed; }

  // Table with every 1-ring start drawn uniformly from `seed`.
  SpiralTable random_table(std::uint64_t seed) const;

  // Seed of the table used by `sample` during `epoch` under the configured
  // ordering mode (fixed mode ignores both).
  std::uint64_t ordering_seed(std::size_t sample, std::size_t epoch) const;
  SpiralTable table_for(std::size_t sample, std::size_t epoch) const;

 private:
  std::vector<std::int32_t> spiral_from(int x, int ring_start, bool reverse_first_ring) const;

  Topology topology_;
  SpiralConfig config_;
  std::uint64_t hash_ = 0;
  std::vector<double> reference_distance_;
  std::vector<std::vector<int>> fans_;  // oriented per config
  SpiralTable fixed_;
};

// Binary cache: magic "N3SP", u32 version, u64 template_hash, u32 m, u32 L,
// u32 hops, u32 dilation, u8 orientation, u8 mode, u64 seed, then m*L int32
// (kPad = -1). All little-endian.
void save_spiral_table(const std::filesystem::path& path, const SpiralTable& table);
SpiralTable load_spiral_table(const std::filesystem::path& path);
std::string encode_spiral_table(const SpiralTable& table);
SpiralTable decode_spiral_table(std::string_view bytes);

}  // namespace n3dmm
