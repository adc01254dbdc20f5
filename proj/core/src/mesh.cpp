#include "n3dmm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "n3dmm/error.hpp"

namespace n3dmm {

namespace {

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

int find_root(std::vector<int>& parent, int v) {
  while (parent[v] != v) {
    parent[v] = parent[parent[v]];
    v = parent[v];
  }
  return v;
}

}  // namespace

void validate_mesh(const Mesh& mesh) {
  const int m = mesh.vertex_count();
  if (m == 0) throw DataError(fmt::format("mesh '{}' has no vertices", mesh.name));
  if (mesh.faces.empty()) throw DataError(fmt::format("mesh '{}' has no faces", mesh.name));

  std::unordered_map<std::uint64_t, int> directed;
  std::unordered_map<std::uint64_t, int> undirected;
  directed.reserve(mesh.faces.size() * 3);
  undirected.reserve(mesh.faces.size() * 3);

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    for (int idx : face) {
      if (idx < 0 || idx >= m) {
        throw DataError(fmt::format("face {} index {} out of range [0, {})", f, idx, m));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw DataError(
          fmt::format("degenerate face {} ({}, {}, {})", f, face[0], face[1], face[2]));
    }
    for (int k = 0; k < 3; ++k) {
      const int a = face[k];
      const int b = face[(k + 1) % 3];
      ++directed[edge_key(a, b)];
      ++undirected[edge_key(std::min(a, b), std::max(a, b))];
    }
  }

  for (const auto& [key, count] : undirected) {
    if (count > 2) {
      throw DataError(fmt::format("non-manifold edge ({}, {}) shared by {} faces",
                                  key >> 32, key & 0xffffffffu, count));
    }
  }
  for (const auto& [key, count] : directed) {
    if (count > 1) {
      throw DataError(fmt::format("inconsistent orientation at edge ({}, {})", key >> 32,
                                  key & 0xffffffffu));
    }
  }

  std::vector<int> parent(static_cast<std::size_t>(m));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<bool> used(static_cast<std::size_t>(m), false);
  for (const Face& face : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      used[face[k]] = true;
      const int ra = find_root(parent, face[k]);
      const int rb = find_root(parent, face[(k + 1) % 3]);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  for (int v = 0; v < m; ++v) {
    if (!used[v]) throw DataError(fmt::format("vertex {} is not referenced by any face", v));
    if (find_root(parent, v) != find_root(parent, 0)) {
      throw DataError(fmt::format("mesh is disconnected: vertex {} unreachable from vertex 0", v));
    }
  }
}

std::uint64_t topology_hash(const Mesh& mesh) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint32_t value) {
    for (int i = 0; i < 4; ++i) {
      h ^= (value >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint32_t>(mesh.vertices.size()));
  feed(static_cast<std::uint32_t>(mesh.faces.size()));
  for (const Face& face : mesh.faces) {
    for (int idx : face) feed(static_cast<std::uint32_t>(idx));
  }
  return h;
}

FeatureMatrix positions_matrix(const Mesh& mesh) {
  FeatureMatrix out(mesh.vertex_count(), 3);
  for (int v = 0; v < mesh.vertex_count(); ++v) out.row(v) = mesh.vertices[v].transpose();
  return out;
}

void set_positions(Mesh& mesh, const FeatureMatrix& positions) {
  if (positions.rows() != mesh.vertex_count() || positions.cols() != 3) {
    throw ShapeError(fmt::format("positions are {}x{}, expected {}x3", positions.rows(),
                                 positions.cols(), mesh.vertex_count()));
  }
  for (int v = 0; v < mesh.vertex_count(); ++v) mesh.vertices[v] = positions.row(v).transpose();
}

Vec3 face_normal(const Mesh& mesh, const Face& face) {
  const Vec3& a = mesh.vertices[face[0]];
  const Vec3& b = mesh.vertices[face[1]];
  const Vec3& c = mesh.vertices[face[2]];
  return (b - a).cross(c - a);
}

Mesh make_tetrahedron(double edge_length) {
  Mesh mesh;
  mesh.name = "tetrahedron";
  const double s = edge_length / std::sqrt(8.0);
  mesh.vertices = {Vec3(s, s, s), Vec3(s, -s, -s), Vec3(-s, s, -s), Vec3(-s, -s, s)};
  mesh.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return mesh;
}

Mesh make_grid(int rows, int cols) {
  Mesh mesh;
  mesh.name = fmt::format("grid{}x{}", rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) mesh.vertices.emplace_back(c, r, 0.0);
  }
  for (int r = 0; r + 1 < rows; ++r) {
    for (int c = 0; c + 1 < cols; ++c) {
      const int a = cols * r + c;
      const int b = a + 1;
      const int up = a + cols;
      const int d = up + 1;
      mesh.faces.push_back({a, b, d});
      mesh.faces.push_back({a, d, up});
    }
  }
  return mesh;
}

Mesh make_icosphere(int level, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh mesh;
  mesh.name = fmt::format("icosphere{}", level);
  mesh.vertices = {Vec3(-1, t, 0),  Vec3(1, t, 0),  Vec3(-1, -t, 0), Vec3(1, -t, 0),
                   Vec3(0, -1, t),  Vec3(0, 1, t),  Vec3(0, -1, -t), Vec3(0, 1, -t),
                   Vec3(t, 0, -1),  Vec3(t, 0, 1),  Vec3(-t, 0, -1), Vec3(-t, 0, 1)};
  for (Vec3& v : mesh.vertices) v.normalize();
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (Face& f : mesh.faces) {
    const Vec3 centroid = mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]];
    if (face_normal(mesh, f).dot(centroid) < 0) std::swap(f[1], f[2]);
  }

  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::make_pair(std::min(a, b), std::max(a, b));
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      const int idx = mesh.vertex_count();
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<Face> refined;
    refined.reserve(mesh.faces.size() * 4);
    for (const Face& f : mesh.faces) {
      const int ab = midpoint(f[0], f[1]);
      const int bc = midpoint(f[1], f[2]);
      const int ca = midpoint(f[2], f[0]);
      refined.push_back({f[0], ab, ca});
      refined.push_back({f[1], bc, ab});
      refined.push_back({f[2], ca, bc});
      refined.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(refined);
  }
  for (Vec3& v : mesh.vertices) v *= radius;
  return mesh;
}

}  // namespace n3dmm
