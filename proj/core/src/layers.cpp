#include "n3dmm/layers.hpp"

#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "n3dmm/error.hpp"
#include "n3dmm/topology.hpp"

namespace n3dmm::nn {

Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.uniform(-limit, limit);
  return Tensor({rows, cols}, std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(glorot_uniform(out, in, in, out, rng)), bias(Tensor({out}, true)) {}

SpiralConv::SpiralConv(std::shared_ptr<const SpiralTable> table, std::size_t in, std::size_t out, Rng& rng)
    : table_(std::move(table)), in_(in), out_(out) {
  const auto len = static_cast<std::size_t>(table_->length);
  weight = glorot_uniform(out, len * in, len * in, out, rng);
  bias = Tensor({out}, true);
}

Tensor SpiralConv::forward(const Tensor& x) const {
  const std::shared_ptr<const SpiralTable> tables[1] = {table_};
  return forward(x, tables);
}

Tensor SpiralConv::forward(const Tensor& x, std::span<const std::shared_ptr<const SpiralTable>> tables) const {
  if (x.rank() != 3 || x.dim(2) != in_ || x.dim(1) != static_cast<std::size_t>(table_->vertex_count)) {
    throw ShapeError(fmt::format("spiral conv expects [B, {}, {}], got {}", table_->vertex_count, in_,
                                 shape_string(x.shape())));
  }
  for (const auto& t : tables) {
    if (t->template_hash != table_->template_hash || t->length != table_->length) {
      throw ShapeError("spiral conv: ordering table belongs to a different template");
    }
  }
  const Tensor gathered = spiral_gather(x, tables);
  return affine(gathered, weight, bias);
}

CsrMatrix scaled_laplacian(const Mesh& mesh) {
  const Topology topo = build_topology(mesh);
  std::vector<std::tuple<int, int, double>> t;
  for (int x = 0; x < topo.vertex_count(); ++x) {
    const double dx = static_cast<double>(topo.adjacency[x].size());
    for (int y : topo.adjacency[x]) {
      const double dy = static_cast<double>(topo.adjacency[y].size());
      t.emplace_back(x, y, -1.0 / std::sqrt(dx * dy));
    }
  }
  return CsrMatrix::from_triplets(topo.vertex_count(), topo.vertex_count(), std::move(t));
}

ChebConv::ChebConv(std::shared_ptr<const CsrMatrix> laplacian, int degree, std::size_t in, std::size_t out,
                   Rng& rng)
    : laplacian_(std::move(laplacian)), degree_(degree), in_(in), out_(out) {
  if (degree < 0) throw ConfigError("Chebyshev degree must be >= 0");
  const std::size_t terms = static_cast<std::size_t>(degree) + 1;
  weight = glorot_uniform(out, terms * in, terms * in, out, rng);
  bias = Tensor({out}, true);
}

Tensor ChebConv::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != in_ || x.dim(1) != static_cast<std::size_t>(laplacian_->rows)) {
    throw ShapeError(fmt::format("Chebyshev conv expects [B, {}, {}], got {}", laplacian_->rows, in_,
                                 shape_string(x.shape())));
  }
  std::vector<Tensor> basis{x};
  if (degree_ >= 1) basis.push_back(sparse_apply(laplacian_, x));
  for (int k = 2; k <= degree_; ++k) {
    basis.push_back(axpby(2.0, sparse_apply(laplacian_, basis[k - 1]), -1.0, basis[k - 2]));
  }
  return affine(concat_last(basis), weight, bias);
}

}  // namespace n3dmm::nn
