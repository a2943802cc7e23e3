#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "flops.hpp"

namespace svmamba {

/// Row-major dense square matrix, used by the oracle paths only.
struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  DenseMatrix() = default;
  explicit DenseMatrix(std::size_t size) : n(size), a(size * size, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct Triplet {
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

/// Symmetric matrix in compressed sparse-row form. Both triangles are stored;
/// columns are sorted within each row and no explicit zeros are kept.
struct SparseSymMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  std::size_t storage_bytes() const {
    return row_ptr.size() * sizeof(std::size_t) + col_idx.size() * sizeof(std::uint32_t) +
           values.size() * sizeof(double);
  }

  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return {col_idx.data() + row_ptr[i], row_ptr[i + 1] - row_ptr[i]};
  }
  std::span<const double> row_values(std::size_t i) const {
    return {values.data() + row_ptr[i], row_ptr[i + 1] - row_ptr[i]};
  }

  /// Entry lookup by binary search; zero when absent.
  double at(std::size_t i, std::size_t j) const {
    const auto cols = row_cols(i);
    const auto it = std::lower_bound(cols.begin(), cols.end(), static_cast<std::uint32_t>(j));
    if (it == cols.end() || *it != j) return 0.0;
    return values[row_ptr[i] + static_cast<std::size_t>(it - cols.begin())];
  }

  /// y = A x, counted under `stage`.
  void multiply(std::span<const double> x, std::span<double> y, Stage stage) const {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += values[k] * x[col_idx[k]];
      y[i] = acc;
    }
    count_ops(stage, 2 * nnz());
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d(i, col_idx[k]) = values[k];
    return d;
  }

  /// Checks sortedness, absence of stored zeros and exact symmetry.
  bool is_well_formed() const {
    if (row_ptr.size() != n + 1 || col_idx.size() != values.size()) return false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
        if (col_idx[k] >= n || values[k] == 0.0) return false;
        if (k > row_ptr[i] && col_idx[k - 1] >= col_idx[k]) return false;
        if (at(col_idx[k], i) != values[k]) return false;
      }
    }
    return true;
  }

  /// Builds from triplets; duplicates are rejected. Missing mirror entries are
  /// an argument error rather than silently symmetrized.
  static SparseSymMatrix from_triplets(std::size_t size, std::vector<Triplet> entries) {
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    SparseSymMatrix m;
    m.n = size;
    m.row_ptr.assign(size + 1, 0);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& e = entries[k];
      if (e.row >= size || e.col >= size) throw_argument("triplet index out of range");
      if (k > 0 && entries[k - 1].row == e.row && entries[k - 1].col == e.col)
        throw_argument("duplicate triplet (" + std::to_string(e.row) + "," + std::to_string(e.col) + ")");
      if (e.value == 0.0) continue;
      m.col_idx.push_back(e.col);
      m.values.push_back(e.value);
      ++m.row_ptr[e.row + 1];
    }
    for (std::size_t i = 0; i < size; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
        if (m.at(m.col_idx[k], i) != m.values[k])
          throw_argument("matrix is not symmetric at (" + std::to_string(i) + "," +
                         std::to_string(m.col_idx[k]) + ")");
    return m;
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
        out.push_back({static_cast<std::uint32_t>(i), col_idx[k], values[k]});
    return out;
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Text triplet dump: one "i j value" line per stored entry, row-major order.
inline std::string to_triplet_text(const SparseSymMatrix& m) {
  std::string out;
  for (const auto& t : m.triplets())
    out += std::to_string(t.row) + " " + std::to_string(t.col) + " " + format_double(t.value) + "\n";
  return out;
}

/// Parses a triplet dump. The size is one past the largest index unless a
/// "# n <size>" line fixes it.
inline SparseSymMatrix parse_triplet_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Triplet> entries;
  std::size_t size = 0;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      std::size_t value = 0;
      if (hs >> key >> value && key == "n") size = std::max(size, value);
      continue;
    }
    std::istringstream ls(line);
    long long i = -1, j = -1;
    double v = 0.0;
    if (!(ls >> i >> j >> v) || i < 0 || j < 0)
      throw ParseError(line_offset, "bad triplet on line " + std::to_string(line_no));
    entries.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), v});
    size = std::max(size, static_cast<std::size_t>(std::max(i, j)) + 1);
  }
  return SparseSymMatrix::from_triplets(size, std::move(entries));
}

}  // namespace svmamba
