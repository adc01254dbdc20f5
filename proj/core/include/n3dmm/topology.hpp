#pragma once

#include <vector>

#include "n3dmm/mesh.hpp"

namespace n3dmm {

// Connectivity derived from a single mesh's faces.
struct Topology {
  // Sorted neighbour lists.
  std::vector<std::vector<int>> adjacency;
  std::vector<std::vector<int>> vertex_faces;
  std::vector<bool> boundary;
  // Neighbours in counterclockwise order around the vertex with respect to
  // the face orientation. Closed fans start at the smallest neighbour index;
  // open (boundary) fans run from one free end to the other.
  std::vector<std::vector<int>> fans;

  int vertex_count() const { return static_cast<int>(adjacency.size()); }
  bool is_boundary(int v) const { return boundary[static_cast<std::size_t>(v)]; }
};

// Throws DataError on non-manifold edges or vertices.
Topology build_topology(const Mesh& mesh);

// Vertices at exactly `hops` edges from `center`, ascending.
std::vector<int> d_ring(const Topology& topology, int center, int hops);

// Hop distance from `center` to every vertex (-1 when unreachable).
std::vector<int> hop_distances(const Topology& topology, int center);

// Dijkstra over the edge graph with Euclidean edge lengths.
std::vector<double> geodesic_distances(const Mesh& mesh, const Topology& topology, int source);

}  // namespace n3dmm
