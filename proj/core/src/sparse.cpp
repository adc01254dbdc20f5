#include "n3dmm/sparse.hpp"

#include <algorithm>
#include <tuple>

#include "n3dmm/error.hpp"

namespace n3dmm {

void CsrMatrix::apply(std::span<const double> in, std::span<double> out, int width) const {
  const auto w = static_cast<std::size_t>(width);
  if (in.size() != static_cast<std::size_t>(cols) * w || out.size() != static_cast<std::size_t>(rows) * w) {
    throw ShapeError("sparse apply: operand size mismatch");
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (int r = 0; r < rows; ++r) {
    double* dst = out.data() + static_cast<std::size_t>(r) * w;
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const double a = values[k];
      const double* src = in.data() + static_cast<std::size_t>(col_idx[k]) * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += a * src[j];
    }
  }
}

void CsrMatrix::apply_transpose_add(std::span<const double> in, std::span<double> out,
                                    int width) const {
  const auto w = static_cast<std::size_t>(width);
  if (in.size() != static_cast<std::size_t>(rows) * w || out.size() != static_cast<std::size_t>(cols) * w) {
    throw ShapeError("sparse transpose apply: operand size mismatch");
  }
  for (int r = 0; r < rows; ++r) {
    const double* src = in.data() + static_cast<std::size_t>(r) * w;
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const double a = values[k];
      double* dst = out.data() + static_cast<std::size_t>(col_idx[k]) * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += a * src[j];
    }
  }
}

CsrMatrix CsrMatrix::from_triplets(int rows, int cols,
                                   std::vector<std::tuple<int, int, double>> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
  int prev_r = -1;
  int prev_c = -1;
  for (const auto& [r, c, v] : triplets) {
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw ShapeError("sparse triplet out of range");
    if (r == prev_r && c == prev_c) {
      m.values.back() += v;
      continue;
    }
    m.col_idx.push_back(c);
    m.values.push_back(v);
    ++m.row_ptr[r + 1];
    prev_r = r;
    prev_c = c;
  }
  for (int r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

}  // namespace n3dmm
