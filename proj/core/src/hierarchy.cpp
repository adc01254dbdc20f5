#include "n3dmm/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <tuple>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "n3dmm/binary_io.hpp"
#include "n3dmm/error.hpp"
#include "n3dmm/topology.hpp"

namespace n3dmm {

namespace {

using Quadric = Eigen::Matrix4d;

// Boundary edges get a perpendicular constraint plane scaled by this weight.
constexpr double kBoundaryWeight = 100.0;
// Collapses that flip a face normal are only taken when nothing else is left.
constexpr double kFlipPenalty = 1e12;
// Costs keep this many mantissa bits, and costs below kCostFloor times the
// squared bounding-box diagonal count as zero. Symmetric meshes have many
// exactly tied collapses; without snapping, rounding differences between
// builds (e.g. FMA contraction) reorder them and change the hierarchy.
constexpr int kCostBits = 32;
constexpr double kCostFloor = 1e-12;

Quadric plane_quadric(const Vec3& normal, const Vec3& point, double weight) {
  Eigen::Vector4d plane;
  plane << normal, -normal.dot(point);
  return weight * plane * plane.transpose();
}

double quadric_cost(const Quadric& q, const Vec3& p) {
  Eigen::Vector4d h;
  h << p, 1.0;
  return h.dot(q * h);
}

class Decimator {
 public:
  explicit Decimator(const Mesh& mesh)
      : mesh_(mesh),
        faces_(mesh.faces),
        face_alive_(mesh.faces.size(), true),
        vertex_faces_(mesh.vertices.size()),
        alive_(mesh.vertices.size(), true),
        quadrics_(mesh.vertices.size(), Quadric::Zero()),
        stamp_(mesh.vertices.size(), 0),
        alive_count_(mesh.vertex_count()) {
    if (!mesh.vertices.empty()) {
      Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
      for (const Vec3& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
      cost_floor_ = kCostFloor * (hi - lo).squaredNorm();
    }
    for (int f = 0; f < static_cast<int>(faces_.size()); ++f) {
      const Face& face = faces_[f];
      const Vec3 n = face_normal(mesh_, face);
      const double len = n.norm();
      for (int k = 0; k < 3; ++k) vertex_faces_[face[k]].push_back(f);
      if (len <= 0) continue;
      const Quadric q = plane_quadric(n / len, mesh_.vertices[face[0]], 1.0);
      for (int k = 0; k < 3; ++k) quadrics_[face[k]] += q;
    }
    // Constraint planes along boundary edges keep open borders in place.
    for (int f = 0; f < static_cast<int>(faces_.size()); ++f) {
      const Face& face = faces_[f];
      const Vec3 n = face_normal(mesh_, face).normalized();
      for (int k = 0; k < 3; ++k) {
        const int a = face[k];
        const int b = face[(k + 1) % 3];
        if (edge_face_count(a, b) != 1) continue;
        const Vec3 e = mesh_.vertices[b] - mesh_.vertices[a];
        const Vec3 perp = e.cross(n);
        if (perp.norm() <= 0) continue;
        const Quadric q = plane_quadric(perp.normalized(), mesh_.vertices[a], kBoundaryWeight);
        quadrics_[a] += q;
        quadrics_[b] += q;
      }
    }
  }

  MeshLevel run(int target) {
    for (int v = 0; v < mesh_.vertex_count(); ++v) {
      for (int w : neighbours(v)) {
        if (v < w) push_edge(v, w);
      }
    }
    while (alive_count_ > target && !heap_.empty()) {
      const Candidate c = heap_.top();
      heap_.pop();
      if (!alive_[c.remove] || !alive_[c.keep]) continue;
      if (stamp_[c.remove] != c.stamp_remove || stamp_[c.keep] != c.stamp_keep) continue;
      if (!collapse_allowed(c.remove, c.keep)) continue;
      collapse(c.remove, c.keep);
    }
    if (alive_count_ > target) {
      throw DataError(fmt::format(
          "decimation of '{}' stopped at {} vertices (target {}): no manifold-preserving collapse left",
          mesh_.name, alive_count_, target));
    }
    return finish();
  }

 private:
  struct Candidate {
    double cost;
    int lo, hi;
    int remove, keep;
    std::uint32_t stamp_remove, stamp_keep;

    // std::priority_queue is a max-heap: "greater" means lower priority.
    bool operator<(const Candidate& o) const {
      return std::tie(cost, lo, hi) > std::tie(o.cost, o.lo, o.hi);
    }
  };

  template <class Fn>
  void for_each_face(int v, Fn&& fn) const {
    for (int f : vertex_faces_[v]) {
      if (face_alive_[f]) fn(f);
    }
  }

  std::vector<int> neighbours(int v) const {
    std::vector<int> out;
    for_each_face(v, [&](int f) {
      for (int u : faces_[f]) {
        if (u != v) out.push_back(u);
      }
    });
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  int edge_face_count(int a, int b) const {
    int count = 0;
    for_each_face(a, [&](int f) {
      const Face& face = faces_[f];
      if (face[0] == b || face[1] == b || face[2] == b) ++count;
    });
    return count;
  }

  bool on_boundary(int v) const {
    for (int w : neighbours(v)) {
      if (edge_face_count(v, w) == 1) return true;
    }
    return false;
  }

  bool collapse_allowed(int remove, int keep) const {
    if (alive_count_ <= 4) return false;
    std::vector<int> opposite;
    for_each_face(remove, [&](int f) {
      const Face& face = faces_[f];
      if (face[0] != keep && face[1] != keep && face[2] != keep) return;
      for (int u : face) {
        if (u != remove && u != keep) opposite.push_back(u);
      }
    });
    if (opposite.empty()) return false;
    const std::vector<int> nr = neighbours(remove);
    const std::vector<int> nk = neighbours(keep);
    std::vector<int> common;
    std::set_intersection(nr.begin(), nr.end(), nk.begin(), nk.end(), std::back_inserter(common));
    std::sort(opposite.begin(), opposite.end());
    if (common != opposite) return false;
    // An interior edge joining two boundary vertices would pinch the surface.
    if (opposite.size() == 2 && on_boundary(remove) && on_boundary(keep)) return false;
    return true;
  }

  bool flips(int remove, int keep) const {
    const Vec3& target = mesh_.vertices[keep];
    bool flipped = false;
    for_each_face(remove, [&](int f) {
      const Face& face = faces_[f];
      if (face[0] == keep || face[1] == keep || face[2] == keep) return;
      const Vec3 before = face_normal(mesh_, face);
      Vec3 pts[3];
      for (int k = 0; k < 3; ++k) pts[k] = face[k] == remove ? target : mesh_.vertices[face[k]];
      const Vec3 after = (pts[1] - pts[0]).cross(pts[2] - pts[0]);
      if (after.dot(before) <= 0.0) flipped = true;
    });
    return flipped;
  }

  double directed_cost(int remove, int keep) const {
    double cost = quadric_cost(quadrics_[remove] + quadrics_[keep], mesh_.vertices[keep]);
    if (flips(remove, keep)) cost += kFlipPenalty;
    return snap(cost);
  }

  double snap(double cost) const {
    if (!(cost > cost_floor_)) return 0.0;
    int exponent = 0;
    const double mantissa = std::frexp(cost, &exponent);
    return std::ldexp(std::nearbyint(std::ldexp(mantissa, kCostBits)), exponent - kCostBits);
  }

  void push_edge(int a, int b) {
    const int lo = std::min(a, b);
    const int hi = std::max(a, b);
    const double c_lo = directed_cost(hi, lo);  // keep lo
    const double c_hi = directed_cost(lo, hi);  // keep hi
    const bool keep_lo = c_lo <= c_hi;
    const int remove = keep_lo ? hi : lo;
    const int keep = keep_lo ? lo : hi;
    heap_.push({keep_lo ? c_lo : c_hi, lo, hi, remove, keep, stamp_[remove], stamp_[keep]});
  }

  void collapse(int remove, int keep) {
    for_each_face(remove, [&](int f) {
      Face& face = faces_[f];
      if (face[0] == keep || face[1] == keep || face[2] == keep) {
        face_alive_[f] = false;
        return;
      }
      for (int& u : face) {
        if (u == remove) u = keep;
      }
      vertex_faces_[keep].push_back(f);
    });
    alive_[remove] = false;
    --alive_count_;
    quadrics_[keep] += quadrics_[remove];

    std::vector<int> touched = neighbours(keep);
    touched.push_back(keep);
    for (int v : touched) ++stamp_[v];
    std::set<std::pair<int, int>> edges;
    for (int v : touched) {
      for (int w : neighbours(v)) edges.emplace(std::min(v, w), std::max(v, w));
    }
    for (const auto& [a, b] : edges) push_edge(a, b);
  }

  MeshLevel finish() const {
    MeshLevel level;
    std::vector<int> child_of(mesh_.vertices.size(), -1);
    for (int v = 0; v < mesh_.vertex_count(); ++v) {
      if (!alive_[v]) continue;
      child_of[v] = static_cast<int>(level.kept_vertices.size());
      level.kept_vertices.push_back(v);
      level.mesh.vertices.push_back(mesh_.vertices[v]);
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      const Face& face = faces_[f];
      level.mesh.faces.push_back({child_of[face[0]], child_of[face[1]], child_of[face[2]]});
    }
    level.mesh.name = mesh_.name + "_ds";
    return level;
  }

  const Mesh& mesh_;
  std::vector<Face> faces_;
  std::vector<bool> face_alive_;
  std::vector<std::vector<int>> vertex_faces_;
  std::vector<bool> alive_;
  std::vector<Quadric> quadrics_;
  std::vector<std::uint32_t> stamp_;
  int alive_count_;
  double cost_floor_ = 0.0;
  std::priority_queue<Candidate> heap_;
};

void build_up_map(const Mesh& parent, MeshLevel& level) {
  const Mesh& child = level.mesh;
  std::vector<int> child_of(parent.vertices.size(), -1);
  for (int i = 0; i < static_cast<int>(level.kept_vertices.size()); ++i) {
    child_of[level.kept_vertices[i]] = i;
  }
  std::vector<int> some_face(child.vertices.size(), -1);
  for (int f = 0; f < child.face_count(); ++f) {
    for (int v : child.faces[f]) {
      if (some_face[v] < 0) some_face[v] = f;
    }
  }

  level.up_map.resize(parent.vertices.size());
  double tie_scale = 0.0;
  for (const Vec3& p : parent.vertices) tie_scale = std::max(tie_scale, p.squaredNorm());
  for (int v = 0; v < parent.vertex_count(); ++v) {
    UpsampleEntry& entry = level.up_map[v];
    if (const int c = child_of[v]; c >= 0) {
      const Face& face = child.faces[some_face[c]];
      const int k = face[0] == c ? 0 : (face[1] == c ? 1 : 2);
      entry.child = {c, face[(k + 1) % 3], face[(k + 2) % 3]};
      entry.weight = {1.0, 0.0, 0.0};
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const Face& face : child.faces) {
      const Vec3& a = child.vertices[face[0]];
      const Vec3& b = child.vertices[face[1]];
      const Vec3& c = child.vertices[face[2]];
      const auto w = closest_point_barycentric(parent.vertices[v], a, b, c);
      const Vec3 q = w[0] * a + w[1] * b + w[2] * c;
      const double d = (q - parent.vertices[v]).squaredNorm();
      // first face wins near-ties (a closest point on a shared edge or vertex)
      const double tol = std::isfinite(best) ? kCostFloor * std::max(best, tie_scale) : 0.0;
      if (d < best - tol) {
        best = d;
        entry.child = face;
        entry.weight = w;
      }
    }
    double sum = 0.0;
    for (double& w : entry.weight) {
      w = std::clamp(w, 0.0, 1.0);
      sum += w;
    }
    for (double& w : entry.weight) w /= sum;
  }
}

constexpr char kHierarchyMagic[4] = {'N', '3', 'H', 'I'};
constexpr std::uint32_t kHierarchyVersion = 1;

}  // namespace

std::array<double, 3> closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b,
                                                const Vec3& c) {
  // Voronoi-region walk over vertices, edges and the face interior.
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return {1 - v - w, v, w};
}

CsrMatrix MeshLevel::downsample_matrix() const {
  std::vector<std::tuple<int, int, double>> t;
  for (int i = 0; i < static_cast<int>(kept_vertices.size()); ++i) t.emplace_back(i, kept_vertices[i], 1.0);
  return CsrMatrix::from_triplets(child_count(), parent_count(), std::move(t));
}

CsrMatrix MeshLevel::upsample_matrix() const {
  std::vector<std::tuple<int, int, double>> t;
  for (int v = 0; v < parent_count(); ++v) {
    for (int k = 0; k < 3; ++k) {
      if (up_map[v].weight[k] != 0.0) t.emplace_back(v, up_map[v].child[k], up_map[v].weight[k]);
    }
  }
  return CsrMatrix::from_triplets(parent_count(), child_count(), std::move(t));
}

MeshLevel decimate(const Mesh& mesh, int factor) {
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  const int m = mesh.vertex_count();
  const int target = (m + factor - 1) / factor;
  MeshLevel level;
  if (factor == 1) {
    level.mesh = mesh;
    level.kept_vertices.resize(m);
    for (int v = 0; v < m; ++v) level.kept_vertices[v] = v;
  } else {
    if (target < 4) {
      throw ConfigError(fmt::format("decimating {} vertices by {} leaves {} < 4 vertices", m, factor, target));
    }
    level = Decimator(mesh).run(target);
  }
  validate_mesh(level.mesh);
  build_topology(level.mesh);
  build_up_map(mesh, level);
  return level;
}

MeshHierarchy build_hierarchy(const Mesh& base, const std::vector<int>& factors) {
  validate_mesh(base);
  MeshHierarchy h;
  h.base = base;
  h.factors = factors;
  for (int factor : factors) h.levels.push_back(decimate(h.mesh(h.depth()), factor));
  return h;
}

FeatureMatrix downsample_features(const MeshLevel& level, const FeatureMatrix& features) {
  if (features.rows() != level.parent_count()) {
    throw ShapeError(fmt::format("downsample: {} rows, level expects {}", features.rows(),
                                 level.parent_count()));
  }
  FeatureMatrix out(level.child_count(), features.cols());
  for (int i = 0; i < level.child_count(); ++i) out.row(i) = features.row(level.kept_vertices[i]);
  return out;
}

FeatureMatrix upsample_features(const MeshLevel& level, const FeatureMatrix& features) {
  if (features.rows() != level.child_count()) {
    throw ShapeError(fmt::format("upsample: {} rows, level expects {}", features.rows(),
                                 level.child_count()));
  }
  FeatureMatrix out = FeatureMatrix::Zero(level.parent_count(), features.cols());
  for (int v = 0; v < level.parent_count(); ++v) {
    const UpsampleEntry& e = level.up_map[v];
    for (int k = 0; k < 3; ++k) out.row(v) += e.weight[k] * features.row(e.child[k]);
  }
  return out;
}

int map_vertex_to_level(const MeshHierarchy& hierarchy, int v, int level) {
  int cur = v;
  for (int i = 0; i < level; ++i) {
    const UpsampleEntry& e = hierarchy.levels[i].up_map.at(cur);
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (e.weight[k] > e.weight[best] || (e.weight[k] == e.weight[best] && e.child[k] < e.child[best])) {
        best = k;
      }
    }
    cur = e.child[best];
  }
  return cur;
}

std::string encode_hierarchy(const MeshHierarchy& hierarchy) {
  ByteWriter w;
  w.put_bytes(std::string_view(kHierarchyMagic, 4));
  w.put(kHierarchyVersion);
  w.put(topology_hash(hierarchy.base));
  w.put(static_cast<std::uint32_t>(hierarchy.depth()));
  for (int i = 0; i < hierarchy.depth(); ++i) {
    const MeshLevel& level = hierarchy.levels[i];
    w.put(static_cast<std::uint32_t>(hierarchy.factors[i]));
    w.put(static_cast<std::uint32_t>(level.kept_vertices.size()));
    for (int v : level.kept_vertices) w.put(static_cast<std::int32_t>(v));
    w.put(static_cast<std::uint32_t>(level.up_map.size()));
    for (const UpsampleEntry& e : level.up_map) {
      for (int c : e.child) w.put(static_cast<std::int32_t>(c));
      for (double x : e.weight) w.put(x);
    }
    w.put(static_cast<std::uint32_t>(level.mesh.faces.size()));
    for (const Face& f : level.mesh.faces) {
      for (int c : f) w.put(static_cast<std::int32_t>(c));
    }
  }
  return w.take();
}

MeshHierarchy decode_hierarchy(std::string_view bytes, const Mesh& base) {
  ByteReader r(bytes);
  if (r.get_bytes(4) != std::string_view(kHierarchyMagic, 4)) throw DataError("not a hierarchy cache");
  if (const auto version = r.get<std::uint32_t>(); version != kHierarchyVersion) {
    throw DataError(fmt::format("unsupported hierarchy cache version {}", version));
  }
  if (r.get<std::uint64_t>() != topology_hash(base)) {
    throw DataError("hierarchy cache was built for a different template");
  }
  MeshHierarchy h;
  h.base = base;
  const auto depth = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < depth; ++i) {
    const Mesh& parent = h.mesh(static_cast<int>(i));
    MeshLevel level;
    h.factors.push_back(static_cast<int>(r.get<std::uint32_t>()));
    level.kept_vertices.resize(r.get<std::uint32_t>());
    for (int& v : level.kept_vertices) {
      v = r.get<std::int32_t>();
      if (v < 0 || v >= parent.vertex_count()) throw DataError("hierarchy cache: kept vertex out of range");
      level.mesh.vertices.push_back(parent.vertices[v]);
    }
    level.up_map.resize(r.get<std::uint32_t>());
    if (static_cast<int>(level.up_map.size()) != parent.vertex_count()) {
      throw DataError("hierarchy cache: up-map size mismatch");
    }
    for (UpsampleEntry& e : level.up_map) {
      for (int& c : e.child) {
        c = r.get<std::int32_t>();
        if (c < 0 || c >= static_cast<int>(level.kept_vertices.size())) {
          throw DataError("hierarchy cache: up-map index out of range");
        }
      }
      for (double& x : e.weight) x = r.get<double>();
    }
    level.mesh.faces.resize(r.get<std::uint32_t>());
    for (Face& f : level.mesh.faces) {
      for (int& c : f) c = r.get<std::int32_t>();
    }
    level.mesh.name = parent.name + "_ds";
    validate_mesh(level.mesh);
    h.levels.push_back(std::move(level));
  }
  if (r.remaining() != 0) throw DataError("trailing bytes in hierarchy cache");
  return h;
}

}  // namespace n3dmm
