#include "n3dmm/spiral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "n3dmm/binary_io.hpp"
#include "n3dmm/error.hpp"
#include "n3dmm/random.hpp"

namespace n3dmm {

namespace {

constexpr char kSpiralMagic[4] = {'N', '3', 'S', 'P'};
constexpr std::uint32_t kSpiralVersion = 1;
constexpr double kTieTolerance = 1e-9;

std::vector<std::vector<int>> oriented_fans(const Topology& topology, Orientation orientation) {
  std::vector<std::vector<int>> fans = topology.fans;
  if (orientation == Orientation::clockwise) {
    for (auto& fan : fans) std::reverse(fan.begin(), fan.end());
  }
  return fans;
}

// Concatenates rings 0..hops around x. Ring 1 is the fan of x rotated to
// begin at `start` (reversed first when requested). Each later ring is
// ordered by first contact: walk the previous ring in order and, for every
// vertex u, take u's fan cyclically from its earliest-placed neighbour,
// appending the neighbours not yet placed. Stops once `limit` entries exist.
std::vector<std::int32_t> ring_spiral(const std::vector<std::vector<int>>& fans, int x, int start,
                                      bool reverse_first_ring, int hops, std::size_t limit) {
  std::vector<std::int32_t> spiral{x};
  if (hops == 0 || limit <= 1) return spiral;

  std::vector<int> first = fans[x];
  if (first.empty()) throw DataError(fmt::format("vertex {} is isolated", x));
  if (reverse_first_ring) std::reverse(first.begin(), first.end());
  const auto it = std::find(first.begin(), first.end(), start);
  if (it == first.end()) throw DataError(fmt::format("{} is not a neighbour of {}", start, x));
  std::rotate(first.begin(), it, first.end());

  auto placed_at = [&spiral](int v) -> std::ptrdiff_t {
    const auto pos = std::find(spiral.begin(), spiral.end(), v);
    return pos == spiral.end() ? -1 : pos - spiral.begin();
  };

  spiral.insert(spiral.end(), first.begin(), first.end());
  std::size_t ring_begin = 1;
  for (int d = 2; d <= hops && spiral.size() < limit; ++d) {
    const std::size_t ring_end = spiral.size();
    for (std::size_t i = ring_begin; i < ring_end; ++i) {
      const std::vector<int>& fan = fans[spiral[i]];
      const std::size_t n = fan.size();
      std::size_t anchor = 0;
      std::ptrdiff_t best = std::numeric_limits<std::ptrdiff_t>::max();
      for (std::size_t k = 0; k < n; ++k) {
        const std::ptrdiff_t p = placed_at(fan[k]);
        if (p >= 0 && p < best) {
          best = p;
          anchor = k;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const int y = fan[(anchor + k) % n];
        if (placed_at(y) < 0) spiral.push_back(y);
      }
    }
    ring_begin = ring_end;
  }
  if (spiral.size() > limit) spiral.resize(limit);
  return spiral;
}

// Cheap per-vertex uniform draw in [0, n).
std::size_t random_start_index(std::uint64_t seed, int x, std::size_t n) {
  const std::uint64_t u = derive_seed(seed, static_cast<std::uint64_t>(x));
  return std::min(n - 1, static_cast<std::size_t>(static_cast<double>(u >> 11) * 0x1.0p-53 *
                                                  static_cast<double>(n)));
}

struct StartChoice {
  int vertex;
  bool reverse;
};

StartChoice fixed_start(const Topology& topology, const std::vector<std::vector<int>>& fans,
                        std::span<const double> dist, int x) {
  const std::vector<int>& fan = fans[x];
  if (fan.empty()) throw DataError(fmt::format("vertex {} is isolated", x));
  if (!topology.is_boundary(x)) return {reference_start(topology, dist, x), false};
  const int a = fan.front();
  const int b = fan.back();
  const double tol = kTieTolerance * std::max(std::abs(dist[a]), std::abs(dist[b]));
  const bool take_b = dist[b] < dist[a] - tol || (std::abs(dist[b] - dist[a]) <= tol && b < a);
  return take_b ? StartChoice{b, true} : StartChoice{a, false};
}

void check_config(const SpiralConfig& config) {
  if (config.hops < 1) throw ConfigError("spiral hops must be >= 1");
  if (config.dilation < 1) throw ConfigError("spiral dilation must be >= 1");
  if (config.length < 0) throw ConfigError("spiral length must be >= 0");
}

}  // namespace

std::string to_string(Orientation o) {
  return o == Orientation::counterclockwise ? "counterclockwise" : "clockwise";
}

std::string to_string(OrderingMode mode) {
  switch (mode) {
    case OrderingMode::fixed:
      return "fixed";
    case OrderingMode::rand_mesh:
      return "rand_mesh";
    case OrderingMode::rand_epoch:
      return "rand_epoch";
    case OrderingMode::rand_mesh_and_epoch:
      return "rand_mesh_and_epoch";
  }
  return "fixed";
}

Orientation parse_orientation(const std::string& text) {
  if (text == "counterclockwise" || text == "ccw") return Orientation::counterclockwise;
  if (text == "clockwise" || text == "cw") return Orientation::clockwise;
  throw ConfigError(fmt::format("unknown orientation '{}'", text));
}

OrderingMode parse_ordering_mode(const std::string& text) {
  for (auto mode : {OrderingMode::fixed, OrderingMode::rand_mesh, OrderingMode::rand_epoch,
                    OrderingMode::rand_mesh_and_epoch}) {
    if (text == to_string(mode)) return mode;
  }
  throw ConfigError(fmt::format("unknown ordering mode '{}'", text));
}

std::uint64_t SpiralTable::checksum() const {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(vertex_count));
  w.put(static_cast<std::uint32_t>(length));
  w.put_all<std::int32_t>(indices);
  return fnv1a(w.bytes());
}

int reference_start(const Topology& topology, std::span<const double> geodesic_from_reference, int x) {
  if (x < 0 || x >= topology.vertex_count()) {
    throw std::out_of_range(fmt::format("vertex {} out of range", x));
  }
  const std::vector<int>& ring = topology.adjacency[x];
  if (ring.empty()) throw DataError(fmt::format("vertex {} is isolated", x));
  int best = ring.front();
  for (int y : ring) {
    // adjacency is sorted, so the smallest index wins ties; near-equal
    // distances count as ties so symmetric meshes order the same at any scale
    const double dy = geodesic_from_reference[y];
    const double db = geodesic_from_reference[best];
    if (dy < db - kTieTolerance * std::max(std::abs(dy), std::abs(db))) best = y;
  }
  return best;
}

int default_spiral_length(const Topology& topology, int hops, int dilation) {
  int largest = 0;
  for (int x = 0; x < topology.vertex_count(); ++x) {
    const std::vector<int> dist = hop_distances(topology, x);
    const int count = static_cast<int>(
        std::count_if(dist.begin(), dist.end(), [hops](int d) { return d >= 1 && d <= hops; }));
    largest = std::max(largest, count);
  }
  return (1 + largest + dilation - 1) / dilation;
}

std::vector<std::int32_t> dilate(std::span<const std::int32_t> spiral, int stride, int length) {
  if (stride < 1) throw ConfigError("dilation stride must be >= 1");
  std::vector<std::int32_t> out(static_cast<std::size_t>(length), kPad);
  for (int i = 0; i < length; ++i) {
    const std::size_t src = static_cast<std::size_t>(i) * stride;
    if (src < spiral.size()) out[i] = spiral[src];
  }
  return out;
}

std::vector<std::int32_t> build_spiral(const Mesh& mesh, const Topology& topology,
                                       const SpiralConfig& config, int x) {
  check_config(config);
  if (x < 0 || x >= topology.vertex_count()) {
    throw std::out_of_range(fmt::format("vertex {} out of range", x));
  }
  const int length = config.length > 0 ? config.length
                                        : default_spiral_length(topology, config.hops, config.dilation);
  const auto fans = oriented_fans(topology, config.orientation);
  const std::size_t limit = static_cast<std::size_t>(length) * config.dilation;

  std::vector<std::int32_t> raw;
  if (config.ordering_mode == OrderingMode::fixed) {
    const std::vector<double> dist = geodesic_distances(mesh, topology, config.reference_vertex);
    const StartChoice s = fixed_start(topology, fans, dist, x);
    raw = ring_spiral(fans, x, s.vertex, s.reverse, config.hops, limit);
  } else {
    const auto& fan = fans[x];
    if (fan.empty()) throw DataError(fmt::format("vertex {} is isolated", x));
    raw = ring_spiral(fans, x, fan[random_start_index(config.seed, x, fan.size())], false,
                      config.hops, limit);
  }
  return dilate(raw, config.dilation, length);
}

SpiralTable build_spiral_table(const Mesh& mesh, const Topology& topology, const SpiralConfig& config) {
  check_config(config);
  SpiralConfig resolved = config;
  if (resolved.length == 0) {
    resolved.length = default_spiral_length(topology, config.hops, config.dilation);
  }
  const auto fans = oriented_fans(topology, config.orientation);
  const int m = topology.vertex_count();
  const std::size_t limit = static_cast<std::size_t>(resolved.length) * resolved.dilation;

  std::vector<double> dist;
  if (config.ordering_mode == OrderingMode::fixed) {
    dist = geodesic_distances(mesh, topology, config.reference_vertex);
  }

  SpiralTable table;
  table.vertex_count = m;
  table.length = resolved.length;
  table.config = resolved;
  table.template_hash = topology_hash(mesh);
  table.indices.reserve(static_cast<std::size_t>(m) * resolved.length);
  for (int x = 0; x < m; ++x) {
    std::vector<std::int32_t> raw;
    if (config.ordering_mode == OrderingMode::fixed) {
      const StartChoice s = fixed_start(topology, fans, dist, x);
      raw = ring_spiral(fans, x, s.vertex, s.reverse, config.hops, limit);
    } else {
      const auto& fan = fans[x];
      if (fan.empty()) throw DataError(fmt::format("vertex {} is isolated", x));
      raw = ring_spiral(fans, x, fan[random_start_index(config.seed, x, fan.size())], false,
                        config.hops, limit);
    }
    const auto row = dilate(raw, resolved.dilation, resolved.length);
    table.indices.insert(table.indices.end(), row.begin(), row.end());
  }
  return table;
}

SpiralGenerator::SpiralGenerator(const Mesh& mesh, SpiralConfig config)
    : topology_(build_topology(mesh)), config_(config), hash_(topology_hash(mesh)) {
  check_config(config_);
  if (config_.length == 0) {
    config_.length = default_spiral_length(topology_, config_.hops, config_.dilation);
  }
  fans_ = oriented_fans(topology_, config_.orientation);
  SpiralConfig fixed_config = config_;
  fixed_config.ordering_mode = OrderingMode::fixed;
  fixed_ = build_spiral_table(mesh, topology_, fixed_config);
  fixed_.config = config_;
}

SpiralTable SpiralGenerator::random_table(std::uint64_t seed) const {
  SpiralTable table;
  table.vertex_count = topology_.vertex_count();
  table.length = config_.length;
  table.config = config_;
  table.config.seed = seed;
  table.template_hash = hash_;
  const std::size_t limit = static_cast<std::size_t>(config_.length) * config_.dilation;
  table.indices.reserve(static_cast<std::size_t>(table.vertex_count) * table.length);
  for (int x = 0; x < table.vertex_count; ++x) {
    const auto& fan = fans_[x];
    const auto raw = ring_spiral(fans_, x, fan[random_start_index(seed, x, fan.size())], false,
                                 config_.hops, limit);
    const auto row = dilate(raw, config_.dilation, config_.length);
    table.indices.insert(table.indices.end(), row.begin(), row.end());
  }
  return table;
}

std::uint64_t SpiralGenerator::ordering_seed(std::size_t sample, std::size_t epoch) const {
  switch (config_.ordering_mode) {
    case OrderingMode::fixed:
      return 0;
    case OrderingMode::rand_mesh:
      return derive_seed(config_.seed, 1, sample);
    case OrderingMode::rand_epoch:
      return derive_seed(config_.seed, 2, epoch);
    case OrderingMode::rand_mesh_and_epoch:
      return derive_seed(config_.seed, 3, sample, epoch);
  }
  return 0;
}

SpiralTable SpiralGenerator::table_for(std::size_t sample, std::size_t epoch) const {
  if (!randomized()) return fixed_;
  return random_table(ordering_seed(sample, epoch));
}

std::string encode_spiral_table(const SpiralTable& table) {
  ByteWriter w;
  w.put_bytes(std::string_view(kSpiralMagic, 4));
  w.put(kSpiralVersion);
  w.put(table.template_hash);
  w.put(static_cast<std::uint32_t>(table.vertex_count));
  w.put(static_cast<std::uint32_t>(table.length));
  w.put(static_cast<std::uint32_t>(table.config.hops));
  w.put(static_cast<std::uint32_t>(table.config.dilation));
  w.put(static_cast<std::uint8_t>(table.config.orientation));
  w.put(static_cast<std::uint8_t>(table.config.ordering_mode));
  w.put(table.config.seed);
  w.put_all<std::int32_t>(table.indices);
  return w.take();
}

SpiralTable decode_spiral_table(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_bytes(4) != std::string_view(kSpiralMagic, 4)) throw DataError("not a spiral table cache");
  if (const auto version = r.get<std::uint32_t>(); version != kSpiralVersion) {
    throw DataError(fmt::format("unsupported spiral cache version {}", version));
  }
  SpiralTable table;
  table.template_hash = r.get<std::uint64_t>();
  table.vertex_count = static_cast<int>(r.get<std::uint32_t>());
  table.length = static_cast<int>(r.get<std::uint32_t>());
  table.config.length = table.length;
  table.config.hops = static_cast<int>(r.get<std::uint32_t>());
  table.config.dilation = static_cast<int>(r.get<std::uint32_t>());
  const auto orientation = r.get<std::uint8_t>();
  const auto mode = r.get<std::uint8_t>();
  if (orientation > 1 || mode > 3) throw DataError("corrupt spiral cache header");
  table.config.orientation = static_cast<Orientation>(orientation);
  table.config.ordering_mode = static_cast<OrderingMode>(mode);
  table.config.seed = r.get<std::uint64_t>();
  table.config.reference_vertex = -1;  // not recorded in the cache
  const std::size_t count = static_cast<std::size_t>(table.vertex_count) * table.length;
  table.indices.resize(count);
  for (auto& v : table.indices) {
    v = r.get<std::int32_t>();
    if (v < kPad || v >= table.vertex_count) throw DataError("spiral cache index out of range");
  }
  if (r.remaining() != 0) throw DataError("trailing bytes in spiral cache");
  return table;
}

void save_spiral_table(const std::filesystem::path& path, const SpiralTable& table) {
  write_binary_file(path, encode_spiral_table(table));
}

SpiralTable load_spiral_table(const std::filesystem::path& path) {
  return decode_spiral_table(read_binary_file(path));
}

}  // namespace n3dmm
