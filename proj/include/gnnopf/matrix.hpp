#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gnnopf {

// Dense row-major real matrix. Column vectors are n x 1.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    assert(data.size() == r * c);
  }

  static Matrix column(std::span<const double> v) { return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end())); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  // Resize keeping the allocation when possible; contents are zeroed.
  void reshape_zero(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    data.assign(r * c, 0.0);
  }

  std::vector<double> column_copy(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ")";
}

// Compressed sparse row square matrix; the GSO is stored this way so that
// repeated shifts cost O(|E| * F) instead of O(N^2 * F).
struct SparseMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col;
  std::vector<double> val;

  std::size_t nnz() const { return val.size(); }

  static SparseMatrix from_dense(const Matrix& a) {
    assert(a.rows == a.cols);
    SparseMatrix s;
    s.n = a.rows;
    s.row_ptr.assign(1, 0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      for (std::size_t j = 0; j < a.cols; ++j) {
        if (a(i, j) != 0.0) {
          s.col.push_back(j);
          s.val.push_back(a(i, j));
        }
      }
      s.row_ptr.push_back(s.col.size());
    }
    return s;
  }

  Matrix to_dense() const {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) a(i, col[p]) = val[p];
    return a;
  }

  SparseMatrix transpose() const {
    SparseMatrix t;
    t.n = n;
    std::vector<std::size_t> counts(n + 1, 0);
    for (std::size_t c : col) ++counts[c + 1];
    for (std::size_t i = 0; i < n; ++i) counts[i + 1] += counts[i];
    t.row_ptr = counts;
    t.col.resize(col.size());
    t.val.resize(val.size());
    std::vector<std::size_t> next(counts.begin(), counts.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
        const std::size_t dst = next[col[p]]++;
        t.col[dst] = i;
        t.val[dst] = val[p];
      }
    }
    return t;
  }
};

} // namespace gnnopf
