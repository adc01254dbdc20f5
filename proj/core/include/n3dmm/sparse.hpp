#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace n3dmm {

// Compressed sparse row matrix acting on per-vertex feature blocks.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col_idx;
  std::vector<double> values;

  std::size_t nonzeros() const { return values.size(); }

  // out[r, :] = sum_c A[r, c] * in[c, :] for `width`-wide rows; out is overwritten.
  void apply(std::span<const double> in, std::span<double> out, int width) const;
  // out[c, :] += sum_r A[r, c] * in[r, :]
  void apply_transpose_add(std::span<const double> in, std::span<double> out, int width) const;

  // Builds from (row, col, value) triplets; duplicates are summed.
  static CsrMatrix from_triplets(int rows, int cols,
                                 std::vector<std::tuple<int, int, double>> triplets);
};

}  // namespace n3dmm
