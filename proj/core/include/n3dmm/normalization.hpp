#pragma once

#include <span>
#include <vector>

#include "n3dmm/mesh.hpp"

namespace n3dmm {

// Per-vertex, per-coordinate statistics of the training shapes.
struct NormalizationStats {
  FeatureMatrix mean;  // m x 3
  FeatureMatrix std;   // m x 3, floored at epsilon

  static constexpr double kEpsilon = 1e-8;

  // Population statistics over the given shapes.
  static NormalizationStats compute(std::span<const FeatureMatrix> shapes);

  FeatureMatrix normalize(const FeatureMatrix& shape) const;
  FeatureMatrix denormalize(const FeatureMatrix& normalized) const;
};

}  // namespace n3dmm
