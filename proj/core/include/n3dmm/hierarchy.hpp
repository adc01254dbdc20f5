#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "n3dmm/mesh.hpp"
#include "n3dmm/sparse.hpp"

namespace n3dmm {

// Barycentric reconstruction of one parent vertex from three child vertices.
struct UpsampleEntry {
  std::array<int, 3> child{};
  std::array<double, 3> weight{};
};

// One decimation step. Child vertex i is parent vertex kept_vertices[i].
struct MeshLevel {
  Mesh mesh;
  std::vector<int> kept_vertices;
  std::vector<UpsampleEntry> up_map;  // one per parent vertex

  int parent_count() const { return static_cast<int>(up_map.size()); }
  int child_count() const { return mesh.vertex_count(); }

  CsrMatrix downsample_matrix() const;
  CsrMatrix upsample_matrix() const;
};

struct MeshHierarchy {
  Mesh base;
  std::vector<MeshLevel> levels;
  std::vector<int> factors;

  int depth() const { return static_cast<int>(levels.size()); }
  // Mesh at level i, 0 being the full-resolution template.
  const Mesh& mesh(int i) const { return i == 0 ? base : levels[i - 1].mesh; }
  int vertex_count(int i) const { return mesh(i).vertex_count(); }
};

// Quadric-error edge collapse down to ceil(m / factor) vertices. Throws
// DataError (with the achieved count) if manifold-preserving collapses run out.
MeshLevel decimate(const Mesh& mesh, int factor);

MeshHierarchy build_hierarchy(const Mesh& base, const std::vector<int>& factors);

// Row selection by kept_vertices.
FeatureMatrix downsample_features(const MeshLevel& level, const FeatureMatrix& features);
// Barycentric interpolation with the stored up_map.
FeatureMatrix upsample_features(const MeshLevel& level, const FeatureMatrix& features);

// Closest point on triangle (a, b, c) to p, as barycentric weights.
std::array<double, 3> closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b,
                                                const Vec3& c);

// Follows the up-maps to find the vertex of level `level` that best
// represents template vertex `v`.
int map_vertex_to_level(const MeshHierarchy& hierarchy, int v, int level);

// Binary cache: magic "N3HI", u32 version, u64 template hash, u32 level count,
// then per level: u32 factor, u32 child count and kept_vertices (int32),
// u32 parent count and up_map entries (3 x int32 + 3 x float64), u32 face
// count and the decimated faces (3 x int32). Child positions are recovered
// from the base mesh through kept_vertices.
std::string encode_hierarchy(const MeshHierarchy& hierarchy);
MeshHierarchy decode_hierarchy(std::string_view bytes, const Mesh& base);

}  // namespace n3dmm
