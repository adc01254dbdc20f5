#include "n3dmm/topology.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <queue>

#include <fmt/format.h>

#include "n3dmm/error.hpp"

namespace n3dmm {

Topology build_topology(const Mesh& mesh) {
  const int m = mesh.vertex_count();
  Topology topo;
  topo.adjacency.resize(m);
  topo.vertex_faces.resize(m);
  topo.boundary.assign(m, false);
  topo.fans.resize(m);

  std::map<std::pair<int, int>, int> edge_faces;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      const int a = face[k];
      const int b = face[(k + 1) % 3];
      if (a < 0 || a >= m || b < 0 || b >= m) {
        throw DataError(fmt::format("face {} index out of range", f));
      }
      topo.vertex_faces[a].push_back(f);
      topo.adjacency[a].push_back(b);
      topo.adjacency[b].push_back(a);
      if (++edge_faces[{std::min(a, b), std::max(a, b)}] > 2) {
        throw DataError(fmt::format("non-manifold edge ({}, {})", std::min(a, b), std::max(a, b)));
      }
    }
  }
  for (auto& adj : topo.adjacency) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }

  for (int v = 0; v < m; ++v) {
    // Each incident face (v, p, q) contributes the counterclockwise step p -> q.
    std::map<int, int> next;
    std::map<int, int> prev;
    for (int f : topo.vertex_faces[v]) {
      const Face& face = mesh.faces[f];
      const int k = face[0] == v ? 0 : (face[1] == v ? 1 : 2);
      const int p = face[(k + 1) % 3];
      const int q = face[(k + 2) % 3];
      if (!next.emplace(p, q).second || !prev.emplace(q, p).second) {
        throw DataError(fmt::format("non-manifold vertex {} (inconsistent face fan)", v));
      }
    }
    if (next.empty()) continue;

    std::vector<int> starts;
    for (const auto& [p, q] : next) {
      if (!prev.contains(p)) starts.push_back(p);
    }
    if (starts.size() > 1) throw DataError(fmt::format("non-manifold vertex {}", v));

    const bool open = !starts.empty();
    const int start = open ? starts.front() : next.begin()->first;
    std::vector<int>& fan = topo.fans[v];
    fan.push_back(start);
    std::size_t steps = 0;
    for (auto it = next.find(start); it != next.end(); it = next.find(it->second)) {
      if (it->second == start) break;
      fan.push_back(it->second);
      if (++steps > next.size()) break;
    }
    const std::size_t expected = next.size() + (open ? 1 : 0);
    if (fan.size() != expected) throw DataError(fmt::format("non-manifold vertex {}", v));
    topo.boundary[v] = open;
  }
  return topo;
}

std::vector<int> hop_distances(const Topology& topology, int center) {
  const int m = topology.vertex_count();
  if (center < 0 || center >= m) {
    throw std::out_of_range(fmt::format("vertex {} out of range [0, {})", center, m));
  }
  std::vector<int> dist(m, -1);
  std::deque<int> queue{center};
  dist[center] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int w : topology.adjacency[u]) {
      if (dist[w] < 0) {
        dist[w] = dist[u] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

std::vector<int> d_ring(const Topology& topology, int center, int hops) {
  if (hops < 0) throw std::invalid_argument("hop count must be non-negative");
  const std::vector<int> dist = hop_distances(topology, center);
  std::vector<int> ring;
  for (int v = 0; v < topology.vertex_count(); ++v) {
    if (dist[v] == hops) ring.push_back(v);
  }
  return ring;
}

std::vector<double> geodesic_distances(const Mesh& mesh, const Topology& topology, int source) {
  const int m = topology.vertex_count();
  if (source < 0 || source >= m) {
    throw std::out_of_range(fmt::format("vertex {} out of range [0, {})", source, m));
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(m, inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (int w : topology.adjacency[u]) {
      const double nd = d + (mesh.vertices[u] - mesh.vertices[w]).norm();
      if (nd < dist[w]) {
        dist[w] = nd;
        heap.emplace(nd, w);
      }
    }
  }
  for (int v = 0; v < m; ++v) {
    if (dist[v] == inf) {
      throw DataError(fmt::format("mesh is disconnected: vertex {} unreachable from {}", v, source));
    }
  }
  return dist;
}

}  // namespace n3dmm
