#include "n3dmm/pca.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "n3dmm/error.hpp"

namespace n3dmm {

namespace {

// Fills rows of `basis` whose norm is ~0 with unit vectors orthogonal to the
// rest (Gram-Schmidt against the canonical basis).
void complete_orthonormal(Eigen::MatrixXd& basis, const std::vector<bool>& valid) {
  const auto k = basis.rows();
  const auto dim = basis.cols();
  std::vector<bool> ok = valid;
  Eigen::Index next_axis = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (ok[static_cast<std::size_t>(i)]) continue;
    while (next_axis < dim) {
      Eigen::VectorXd v = Eigen::VectorXd::Unit(dim, next_axis++);
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < k; ++j)
          if (ok[static_cast<std::size_t>(j)]) v -= basis.row(j).dot(v) * basis.row(j).transpose();
      double n = v.norm();
      if (n > 1e-6) {
        basis.row(i) = v.transpose() / n;
        ok[static_cast<std::size_t>(i)] = true;
        break;
      }
    }
  }
}

}  // namespace

PCAModel pca_fit(const Eigen::MatrixXd& data, int k) {
  const auto n = data.rows();
  const auto dim = data.cols();
  if (n == 0 || dim == 0) throw DataError("PCA needs a non-empty data matrix");
  if (k < 0 || k > std::min(n, dim))
    throw ConfigError(fmt::format("PCA rank {} exceeds min(N, D) = {}", k, std::min(n, dim)));

  PCAModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  model.components.resize(k, dim);
  model.eigenvalues.resize(k);

  const double scale = 1.0 / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  std::vector<bool> valid(static_cast<std::size_t>(k), true);
  if (n <= dim) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered * centered.transpose() * scale);
    const double tol = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300) * 1e-12;
    for (int i = 0; i < k; ++i) {
      const Eigen::Index src = n - 1 - i;
      const double lambda = std::max(es.eigenvalues()(src), 0.0);
      model.eigenvalues(i) = lambda;
      if (lambda <= tol) {
        model.eigenvalues(i) = 0.0;
        valid[static_cast<std::size_t>(i)] = false;
        continue;
      }
      Eigen::VectorXd v = centered.transpose() * es.eigenvectors().col(src);
      model.components.row(i) = v.transpose() / v.norm();
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered * scale);
    for (int i = 0; i < k; ++i) {
      const Eigen::Index src = dim - 1 - i;
      model.eigenvalues(i) = std::max(es.eigenvalues()(src), 0.0);
      model.components.row(i) = es.eigenvectors().col(src).transpose();
    }
  }
  complete_orthonormal(model.components, valid);
  return model;
}

Eigen::VectorXd PCAModel::encode(const Eigen::VectorXd& shape) const {
  if (shape.size() != mean.size())
    throw ShapeError(fmt::format("PCA input has {} entries, model expects {}", shape.size(), mean.size()));
  Eigen::VectorXd proj = components * (shape - mean);
  for (Eigen::Index i = 0; i < proj.size(); ++i) proj(i) = eigenvalues(i) > 0 ? proj(i) / std::sqrt(eigenvalues(i)) : 0.0;
  return proj;
}

Eigen::VectorXd PCAModel::decode(const Eigen::VectorXd& alpha) const {
  if (alpha.size() != components.rows())
    throw ShapeError(fmt::format("PCA code has {} entries, model rank is {}", alpha.size(), components.rows()));
  return mean + components.transpose() * alpha.cwiseProduct(eigenvalues.cwiseSqrt());
}

Eigen::VectorXd PCAModel::reconstruct(const Eigen::VectorXd& shape) const {
  if (shape.size() != mean.size())
    throw ShapeError(fmt::format("PCA input has {} entries, model expects {}", shape.size(), mean.size()));
  return mean + components.transpose() * (components * (shape - mean));
}

}  // namespace n3dmm
