#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ci4gi {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major buffer of 64-bit floats. Rank 0 (scalar), 1 and 2 are the
/// only ranks the model needs; nothing broadcasts implicitly.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  // Rank-1 tensors behave as column vectors; scalars as 1x1.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  // Value of a single-element tensor.
  double item() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed-sparse-row matrix. Column indices are strictly increasing within
/// each row; nnz() == row_offsets().back().
class SparseMatrix {
 public:
  SparseMatrix() : SparseMatrix(0, 0) {}
  SparseMatrix(std::size_t rows, std::size_t cols);
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
               std::vector<std::size_t> col_indices, std::vector<double> values);

  // Duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_indices_.size(); }

  std::span<const std::size_t> row_offsets() const noexcept { return row_offsets_; }
  std::span<const std::size_t> col_indices() const noexcept { return col_indices_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const std::size_t> row_indices(std::size_t r) const {
    return {col_indices_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }
  std::size_t row_nnz(std::size_t r) const { return row_offsets_[r + 1] - row_offsets_[r]; }

  bool contains(std::size_t r, std::size_t c) const;
  double value_at(std::size_t r, std::size_t c) const;

  SparseMatrix transpose() const;
  Tensor to_dense() const;
  std::vector<Triplet> triplets() const;

  // Sparse-sparse product; used only for graph construction.
  SparseMatrix multiply(const SparseMatrix& other) const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::size_t> row_offsets_;
  std::vector<std::size_t> col_indices_;
  std::vector<double> values_;
};

namespace kernels {

// Dense kernels without tape bookkeeping. Shapes are checked.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);
Tensor spmm(const SparseMatrix& s, const Tensor& b);
Tensor spmm_t(const SparseMatrix& s, const Tensor& b);  // s^T * b

}  // namespace kernels

}  // namespace ci4gi
