#pragma once

// Independent reference implementations used as test oracles. None of these
// share code with the library routines they check.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "n3dmm/mesh.hpp"
#include "n3dmm/tensor.hpp"

namespace oracle {

// Neighbours of `center` sorted counterclockwise around `normal` by atan2 in
// the tangent plane, rotated so that `start` comes first.
inline std::vector<int> angular_sort(const n3dmm::Mesh& mesh, int center, const n3dmm::Vec3& normal,
                                     std::vector<int> neighbours, int start) {
  const n3dmm::Vec3 c = mesh.vertices[static_cast<std::size_t>(center)];
  const n3dmm::Vec3 n = normal.normalized();
  n3dmm::Vec3 ref = mesh.vertices[static_cast<std::size_t>(start)] - c;
  ref = (ref - ref.dot(n) * n).normalized();
  const n3dmm::Vec3 ref2 = n.cross(ref);
  auto angle = [&](int v) {
    n3dmm::Vec3 d = mesh.vertices[static_cast<std::size_t>(v)] - c;
    double a = std::atan2(d.dot(ref2), d.dot(ref));
    return a < -1e-12 ? a + 2.0 * M_PI : std::max(a, 0.0);
  };
  std::sort(neighbours.begin(), neighbours.end(), [&](int a, int b) { return angle(a) < angle(b); });
  return neighbours;
}

// Singular values of `a` by one-sided Jacobi rotations, descending.
inline std::vector<double> jacobi_singular_values(Eigen::MatrixXd a) {
  // Work on the orientation with fewer columns.
  if (a.cols() > a.rows()) a.transposeInPlace();
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n - 1; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        double alpha = a.col(p).squaredNorm();
        double beta = a.col(q).squaredNorm();
        double gamma = a.col(p).dot(a.col(q));
        if (std::abs(gamma) <= 1e-300) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        Eigen::VectorXd ap = a.col(p);
        Eigen::VectorXd aq = a.col(q);
        a.col(p) = cs * ap - sn * aq;
        a.col(q) = sn * ap + cs * aq;
      }
    if (off < 1e-15) break;
  }
  std::vector<double> s;
  for (Eigen::Index j = 0; j < n; ++j) s.push_back(a.col(j).norm());
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

// Dense -D^{-1/2} A D^{-1/2} from a face list.
inline Eigen::MatrixXd dense_scaled_laplacian(const n3dmm::Mesh& mesh) {
  const int m = mesh.vertex_count();
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(m, m);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      adj(f[k], f[(k + 1) % 3]) = 1.0;
      adj(f[(k + 1) % 3], f[k]) = 1.0;
    }
  Eigen::VectorXd deg = adj.rowwise().sum();
  Eigen::MatrixXd out(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = -adj(i, j) / std::sqrt(deg(i) * deg(j));
  return out;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central finite differences of `loss` with respect to every entry of every
// tensor in `inputs`, compared with the reverse-mode gradient. Relative error
// is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheck check_gradients(const std::function<n3dmm::nn::Tensor()>& loss,
                                 std::vector<n3dmm::nn::Tensor> inputs, double step = 1e-5,
                                 double floor = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  n3dmm::nn::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.size(), 0.0);
  }
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double up = loss().item();
      values[j] = saved - step;
      const double down = loss().item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
