#include "n3dmm/ops.hpp"

#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "n3dmm/error.hpp"

namespace n3dmm::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

std::shared_ptr<Node> make_node(Shape shape, const char* op, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->value.assign(numel(shape), 0.0);
  node->shape = std::move(shape);
  node->op = op;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->defined() ? t->node() : nullptr);
  }
  return node;
}

bool wants_grad(const Node& self, std::size_t i) {
  return self.inputs[i] != nullptr && self.inputs[i]->requires_grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes {} and {} differ", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
}

void require_rank3(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw ShapeError(fmt::format("{}: expected [B, n, w], got {}", op, shape_string(x.shape())));
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(1)) {
    throw ShapeError(fmt::format("affine: input {} incompatible with weight {}", shape_string(x.shape()),
                                 shape_string(w.shape())));
  }
  const auto in = static_cast<Eigen::Index>(w.dim(1));
  const auto out = static_cast<Eigen::Index>(w.dim(0));
  if (b.defined() && (b.size() != static_cast<std::size_t>(out))) {
    throw ShapeError(fmt::format("affine: bias {} does not match {} outputs", shape_string(b.shape()), out));
  }
  const auto rows = static_cast<Eigen::Index>(x.size() / static_cast<std::size_t>(in));
  Shape shape = x.shape();
  shape.back() = static_cast<std::size_t>(out);
  auto node = make_node(std::move(shape), "affine", {&x, &w, &b});

  ConstMapMat X(x.values().data(), rows, in);
  ConstMapMat W(w.values().data(), out, in);
  MapMat Y(node->value.data(), rows, out);
  Y.noalias() = X * W.transpose();
  if (b.defined()) Y.rowwise() += ConstMapVec(b.values().data(), out).transpose();

  if (node->requires_grad) {
    node->backward = [rows, in, out](Node& self) {
      ConstMapMat dY(self.grad.data(), rows, out);
      const Node& xn = *self.inputs[0];
      const Node& wn = *self.inputs[1];
      if (wants_grad(self, 0)) {
        MapMat dX(self.inputs[0]->grad_buffer().data(), rows, in);
        dX.noalias() += dY * ConstMapMat(wn.value.data(), out, in);
      }
      if (wants_grad(self, 1)) {
        MapMat dW(self.inputs[1]->grad_buffer().data(), out, in);
        dW.noalias() += dY.transpose() * ConstMapMat(xn.value.data(), rows, in);
      }
      if (wants_grad(self, 2)) {
        Eigen::Map<Eigen::VectorXd> db(self.inputs[2]->grad_buffer().data(), out);
        db += dY.colwise().sum().transpose();
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError(fmt::format("reshape: {} -> {}", shape_string(x.shape()), shape_string(shape)));
  }
  auto node = make_node(std::move(shape), "reshape", {&x});
  std::copy(x.values().begin(), x.values().end(), node->value.begin());
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor axpby(double alpha, const Tensor& a, double beta, const Tensor& b) {
  require_same_shape(a, b, "axpby");
  auto node = make_node(a.shape(), "axpby", {&a, &b});
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = alpha * av[i] + beta * bv[i];
  if (node->requires_grad) {
    node->backward = [alpha, beta](Node& self) {
      const double coef[2] = {alpha, beta};
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants_grad(self, k)) continue;
        auto g = self.inputs[k]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += coef[k] * self.grad[i];
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor add(const Tensor& a, const Tensor& b) { return axpby(1.0, a, 1.0, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return axpby(1.0, a, -1.0, b); }

Tensor scale(const Tensor& a, double s) {
  auto node = make_node(a.shape(), "scale", {&a});
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = s * av[i];
  if (node->requires_grad) {
    node->backward = [s](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    };
  }
  return Tensor::wrap(node);
}

Tensor elu(const Tensor& x, double alpha) {
  auto node = make_node(x.shape(), "elu", {&x});
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    node->value[i] = xv[i] > 0 ? xv[i] : alpha * std::expm1(xv[i]);
  }
  if (node->requires_grad) {
    node->backward = [alpha](Node& self) {
      const auto& xv = self.inputs[0]->value;
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        // d/dx alpha (e^x - 1) = y + alpha
        g[i] += self.grad[i] * (xv[i] > 0 ? 1.0 : self.value[i] + alpha);
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor sum(const Tensor& x) {
  auto node = make_node({1}, "sum", {&x});
  double total = 0.0;
  for (double v : x.values()) total += v;
  node->value[0] = total;
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (double& v : g) v += self.grad[0];
    };
  }
  return Tensor::wrap(node);
}

Tensor l1_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "l1_loss");
  auto node = make_node({1}, "l1_loss", {&prediction, &target});
  const auto p = prediction.values();
  const auto t = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  node->value[0] = total / n;
  if (node->requires_grad) {
    node->backward = [n](Node& self) {
      const auto& p = self.inputs[0]->value;
      const auto& t = self.inputs[1]->value;
      const double g = self.grad[0] / n;
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants_grad(self, k)) continue;
        auto out = self.inputs[k]->grad_buffer();
        const double sign = k == 0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double d = p[i] - t[i];
          out[i] += sign * g * static_cast<double>((d > 0) - (d < 0));
        }
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse_loss");
  auto node = make_node({1}, "mse_loss", {&prediction, &target});
  const auto p = prediction.values();
  const auto t = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  node->value[0] = total / n;
  if (node->requires_grad) {
    node->backward = [n](Node& self) {
      const auto& p = self.inputs[0]->value;
      const auto& t = self.inputs[1]->value;
      const double g = 2.0 * self.grad[0] / n;
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants_grad(self, k)) continue;
        auto out = self.inputs[k]->grad_buffer();
        const double sign = k == 0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * g * (p[i] - t[i]);
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor sparse_apply(std::shared_ptr<const CsrMatrix> a, const Tensor& x) {
  require_rank3(x, "sparse_apply");
  if (x.dim(1) != static_cast<std::size_t>(a->cols)) {
    throw ShapeError(fmt::format("sparse_apply: operator has {} columns, input has {} rows", a->cols, x.dim(1)));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t width = x.dim(2);
  const std::size_t in_block = x.dim(1) * width;
  const std::size_t out_block = static_cast<std::size_t>(a->rows) * width;
  auto node = make_node({batch, static_cast<std::size_t>(a->rows), width}, "sparse_apply", {&x});
  for (std::size_t b = 0; b < batch; ++b) {
    a->apply(x.values().subspan(b * in_block, in_block),
             std::span(node->value).subspan(b * out_block, out_block), static_cast<int>(width));
  }
  if (node->requires_grad) {
    node->backward = [a, batch, width, in_block, out_block](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        a->apply_transpose_add(std::span<const double>(self.grad).subspan(b * out_block, out_block),
                               g.subspan(b * in_block, in_block), static_cast<int>(width));
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor spiral_gather(const Tensor& x, std::span<const std::shared_ptr<const SpiralTable>> tables) {
  require_rank3(x, "spiral_gather");
  const std::size_t batch = x.dim(0);
  const std::size_t m = x.dim(1);
  const std::size_t w = x.dim(2);
  if (tables.empty() || (tables.size() != 1 && tables.size() != batch)) {
    throw ShapeError(fmt::format("spiral_gather: {} tables for batch of {}", tables.size(), batch));
  }
  const std::size_t len = static_cast<std::size_t>(tables.front()->length);
  for (const auto& t : tables) {
    if (static_cast<std::size_t>(t->vertex_count) != m || static_cast<std::size_t>(t->length) != len) {
      throw ShapeError(fmt::format("spiral_gather: table {}x{} does not match {} vertices", t->vertex_count,
                                   t->length, m));
    }
  }
  auto node = make_node({batch, m, len * w}, "spiral_gather", {&x});
  const double* src = x.values().data();
  double* dst = node->value.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const SpiralTable& table = *tables[tables.size() == 1 ? 0 : b];
    const double* xb = src + b * m * w;
    for (std::size_t v = 0; v < m; ++v) {
      const std::int32_t* row = table.indices.data() + v * len;
      double* out = dst + (b * m + v) * len * w;
      for (std::size_t l = 0; l < len; ++l, out += w) {
        if (row[l] == kPad) continue;
        const double* in = xb + static_cast<std::size_t>(row[l]) * w;
        std::copy(in, in + w, out);
      }
    }
  }
  if (node->requires_grad) {
    std::vector<std::shared_ptr<const SpiralTable>> kept(tables.begin(), tables.end());
    node->backward = [kept = std::move(kept), batch, m, w, len](Node& self) {
      double* g = self.inputs[0]->grad_buffer().data();
      const double* dy = self.grad.data();
      for (std::size_t b = 0; b < batch; ++b) {
        const SpiralTable& table = *kept[kept.size() == 1 ? 0 : b];
        double* gb = g + b * m * w;
        for (std::size_t v = 0; v < m; ++v) {
          const std::int32_t* row = table.indices.data() + v * len;
          const double* d = dy + (b * m + v) * len * w;
          for (std::size_t l = 0; l < len; ++l, d += w) {
            if (row[l] == kPad) continue;
            double* out = gb + static_cast<std::size_t>(row[l]) * w;
            for (std::size_t j = 0; j < w; ++j) out[j] += d[j];
          }
        }
      }
    };
  }
  return Tensor::wrap(node);
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    const std::size_t wdt = s.back();
    s.pop_back();
    if (s != lead) throw ShapeError("concat_last: leading dimensions differ");
    widths.push_back(wdt);
    total += wdt;
  }
  Shape shape = lead;
  shape.push_back(total);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->op = "concat_last";
  node->value.assign(numel(shape), 0.0);
  for (const Tensor& p : parts) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    for (const Tensor& p : parts) node->inputs.push_back(p.node());
  }
  const std::size_t rows = numel(lead);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].values().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], node->value.data() + r * total + offset);
    }
    offset += widths[k];
  }
  if (node->requires_grad) {
    node->backward = [widths, rows, total](Node& self) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (self.inputs[k]->requires_grad) {
          double* g = self.inputs[k]->grad_buffer().data();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* d = self.grad.data() + r * total + offset;
            for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += d[j];
          }
        }
        offset += widths[k];
      }
    };
  }
  return Tensor::wrap(node);
}

}  // namespace n3dmm::nn
