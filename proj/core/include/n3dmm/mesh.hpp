#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace n3dmm {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

// Row-major dense matrix used for per-vertex feature fields (rows = vertices).
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Fixed-topology triangle mesh. Vertex order is significant: every sample of
// a dataset shares the template's indexing.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string name;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

// Checks index range, degenerate faces, edge manifoldness, consistent
// orientation and edge-graph connectivity. Throws DataError describing the
// first violation found.
void validate_mesh(const Mesh& mesh);

// FNV-1a checksum of the vertex count and face list.
std::uint64_t topology_hash(const Mesh& mesh);

// Positions as an m x 3 matrix and back.
FeatureMatrix positions_matrix(const Mesh& mesh);
void set_positions(Mesh& mesh, const FeatureMatrix& positions);

Vec3 face_normal(const Mesh& mesh, const Face& face);

// Primitive builders (all outward / +z oriented, counterclockwise faces).
Mesh make_tetrahedron(double edge_length = 1.0);
// rows x cols vertex lattice in the z=0 plane, vertex v = cols*r + c at (c, r, 0).
Mesh make_grid(int rows, int cols);
// Subdivided icosahedron projected to a sphere: 10*4^level + 2 vertices.
Mesh make_icosphere(int level, double radius = 1.0);

}  // namespace n3dmm
