#pragma once

#include <Eigen/Core>

namespace n3dmm {

// Linear morphable model y ~ mean + sum_i alpha_i sqrt(d_i) v_i.
struct PCAModel {
  Eigen::VectorXd mean;         // D
  Eigen::MatrixXd components;   // k x D, orthonormal rows
  Eigen::VectorXd eigenvalues;  // k, descending, >= 0

  int rank() const { return static_cast<int>(components.rows()); }

  // Unit-variance coefficients alpha (zero where d_i = 0).
  Eigen::VectorXd encode(const Eigen::VectorXd& shape) const;
  Eigen::VectorXd decode(const Eigen::VectorXd& alpha) const;
  // Orthogonal projection onto the model subspace.
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& shape) const;
};

// data: N x D, one flattened shape per row. Eigenvalues are those of the
// sample covariance (divisor N - 1). Eigendecomposition of the Gram
// matrix when N <= D, of the covariance otherwise. Throws ConfigError when
// k > min(N, D).
PCAModel pca_fit(const Eigen::MatrixXd& data, int k);

}  // namespace n3dmm
