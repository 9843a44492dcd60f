#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chromalayer/error.hpp"

namespace chromalayer {

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row.
class SparseRowMatrix {
public:
  SparseRowMatrix() = default;
  SparseRowMatrix(std::size_t rows, std::size_t cols) : cols_(cols), expected_rows_(rows) { row_ptr_.reserve(rows + 1); }

  std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return values_.size(); }
  bool complete() const { return rows() == expected_rows_; }

  /// Appends the next row. Entries must be sorted by strictly increasing column.
  void append_row(std::span<const std::uint32_t> columns, std::span<const double> values) {
    if (columns.size() != values.size()) throw InvalidArgument("row column/value length mismatch");
    for (std::size_t k = 0; k < columns.size(); ++k) {
      if (columns[k] >= cols_) throw InvalidArgument("column index out of bounds");
      if (k > 0 && columns[k] <= columns[k - 1]) throw InvalidArgument("row columns not strictly increasing");
    }
    cols_idx_.insert(cols_idx_.end(), columns.begin(), columns.end());
    values_.insert(values_.end(), values.begin(), values.end());
    row_ptr_.push_back(values_.size());
  }

  void append_empty_row() { row_ptr_.push_back(values_.size()); }

  std::span<const std::uint32_t> row_columns(std::size_t r) const {
    return std::span<const std::uint32_t>(cols_idx_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
  }
  std::span<const double> row_values(std::size_t r) const {
    return std::span<const double>(values_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
  }

  double row_sum(std::size_t r) const {
    double s = 0.0;
    for (double v : row_values(r)) s += v;
    return s;
  }

  double at(std::size_t r, std::size_t c) const {
    auto cols = row_columns(r);
    auto vals = row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] == c) return vals[k];
    }
    return 0.0;
  }

  /// y = A x
  void multiply(std::span<const double> x, std::span<double> y) const {
    if (x.size() != cols_ || y.size() != rows()) throw InvalidArgument("dimension mismatch in sparse multiply");
    for (std::size_t r = 0; r < rows(); ++r) {
      double s = 0.0;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += values_[k] * x[cols_idx_[k]];
      y[r] = s;
    }
  }

  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(rows());
    multiply(x, y);
    return y;
  }

  SparseRowMatrix transposed() const {
    SparseRowMatrix t;
    t.cols_ = rows();
    t.expected_rows_ = cols_;
    std::vector<std::size_t> counts(cols_ + 1, 0);
    for (std::uint32_t c : cols_idx_) ++counts[c + 1];
    for (std::size_t c = 0; c < cols_; ++c) counts[c + 1] += counts[c];
    t.row_ptr_ = counts;
    t.cols_idx_.resize(values_.size());
    t.values_.resize(values_.size());
    std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        const std::size_t dst = cursor[cols_idx_[k]]++;
        t.cols_idx_[dst] = static_cast<std::uint32_t>(r);
        t.values_[dst] = values_[k];
      }
    }
    return t;
  }

  std::span<const std::size_t> row_offsets() const { return row_ptr_; }
  std::span<const std::uint32_t> column_indices() const { return cols_idx_; }
  std::span<const double> values() const { return values_; }

private:
  std::size_t cols_ = 0;
  std::size_t expected_rows_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> cols_idx_;
  std::vector<double> values_;
};

} // namespace chromalayer
