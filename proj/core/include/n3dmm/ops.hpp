#pragma once

#include <memory>
#include <span>
#include <vector>

#include "n3dmm/sparse.hpp"
#include "n3dmm/spiral.hpp"
#include "n3dmm/tensor.hpp"

namespace n3dmm::nn {

// Differentiable operations. Every op records its inputs when any of them
// requires a gradient; otherwise the result is a plain leaf.

// y = x W^T + b over the last axis of x. w: [out, in]; b: [out] or undefined.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// alpha * a + beta * b
Tensor axpby(double alpha, const Tensor& a, double beta, const Tensor& b);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor sum(const Tensor& x);
// Mean absolute difference over all entries.
Tensor l1_loss(const Tensor& prediction, const Tensor& target);
// Mean squared difference over all entries.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// [B, n, w] -> [B, rows, w] with out[b] = A x[b].
Tensor sparse_apply(std::shared_ptr<const CsrMatrix> a, const Tensor& x);

// [B, m, w] -> [B, m, L*w]: row x holds the features of S_1(x) ... S_L(x),
// zero for kPad. `tables` holds one table shared by the batch or one per sample.
Tensor spiral_gather(const Tensor& x, std::span<const std::shared_ptr<const SpiralTable>> tables);

// Concatenation along the last axis; all leading dimensions must agree.
Tensor concat_last(std::span<const Tensor> parts);

}  // namespace n3dmm::nn
