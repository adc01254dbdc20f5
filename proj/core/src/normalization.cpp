#include "n3dmm/normalization.hpp"

#include <fmt/format.h>

#include <cmath>

#include "n3dmm/error.hpp"

namespace n3dmm {

NormalizationStats NormalizationStats::compute(std::span<const FeatureMatrix> shapes) {
  if (shapes.empty()) throw DataError("cannot compute normalisation statistics from zero shapes");
  const auto rows = shapes[0].rows();
  const auto cols = shapes[0].cols();
  NormalizationStats s;
  s.mean = FeatureMatrix::Zero(rows, cols);
  for (const auto& x : shapes) {
    if (x.rows() != rows || x.cols() != cols)
      throw ShapeError(fmt::format("shape is {}x{}, expected {}x{}", x.rows(), x.cols(), rows, cols));
    s.mean += x;
  }
  s.mean /= static_cast<double>(shapes.size());
  FeatureMatrix var = FeatureMatrix::Zero(rows, cols);
  for (const auto& x : shapes) var += (x - s.mean).cwiseAbs2();
  var /= static_cast<double>(shapes.size());
  s.std = var.cwiseSqrt().cwiseMax(kEpsilon);
  return s;
}

FeatureMatrix NormalizationStats::normalize(const FeatureMatrix& shape) const {
  if (shape.rows() != mean.rows() || shape.cols() != mean.cols())
    throw ShapeError(fmt::format("shape is {}x{}, statistics are {}x{}", shape.rows(), shape.cols(), mean.rows(),
                                 mean.cols()));
  return (shape - mean).cwiseQuotient(std);
}

FeatureMatrix NormalizationStats::denormalize(const FeatureMatrix& normalized) const {
  if (normalized.rows() != mean.rows() || normalized.cols() != mean.cols())
    throw ShapeError(fmt::format("shape is {}x{}, statistics are {}x{}", normalized.rows(), normalized.cols(),
                                 mean.rows(), mean.cols()));
  return normalized.cwiseProduct(std) + mean;
}

}  // namespace n3dmm
