#pragma once

#include <memory>
#include <span>
#include <vector>

#include "n3dmm/mesh.hpp"
#include "n3dmm/ops.hpp"
#include "n3dmm/random.hpp"
#include "n3dmm/sparse.hpp"
#include "n3dmm/spiral.hpp"
#include "n3dmm/tensor.hpp"

namespace n3dmm::nn {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng& rng);

class Linear {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const { return affine(x, weight, bias); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

// Spiral convolution: out[x] = bias + W concat(f(S_1(x)), ..., f(S_L(x))),
// with one weight block per spiral position shared by all vertices.
class SpiralConv {
 public:
  SpiralConv(std::shared_ptr<const SpiralTable> table, std::size_t in, std::size_t out, Rng& rng);

  // x: [B, m, in] -> [B, m, out], using the layer's own table.
  Tensor forward(const Tensor& x) const;
  // Per-sample orderings (one table per batch entry, or one shared). Every
  // table must come from the same template as the layer's table.
  Tensor forward(const Tensor& x, std::span<const std::shared_ptr<const SpiralTable>> tables) const;

  const SpiralTable& table() const { return *table_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  Tensor weight;  // [out, L * in]
  Tensor bias;    // [out]

 private:
  std::shared_ptr<const SpiralTable> table_;
  std::size_t in_;
  std::size_t out_;
};

// Rescaled symmetric-normalised Laplacian 2L/lambda_max - I with
// lambda_max = 2, i.e. off-diagonal entries -1/sqrt(deg x deg y) and a
// zero diagonal.
CsrMatrix scaled_laplacian(const Mesh& mesh);

// Chebyshev spectral convolution of the given degree:
// out = bias + sum_k T_k(L~) x theta_k^T with theta_k stored as column
// blocks of `weight`.
class ChebConv {
 public:
  ChebConv(std::shared_ptr<const CsrMatrix> laplacian, int degree, std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;

  int degree() const { return degree_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  const CsrMatrix& laplacian() const { return *laplacian_; }

  Tensor weight;  // [out, (degree + 1) * in]
  Tensor bias;    // [out]

 private:
  std::shared_ptr<const CsrMatrix> laplacian_;
  int degree_;
  std::size_t in_;
  std::size_t out_;
};

}  // namespace n3dmm::nn
