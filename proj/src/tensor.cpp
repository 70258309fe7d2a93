#include "ci4gi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ci4gi/errors.hpp"

namespace ci4gi {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{n, m}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), row_offsets_(rows + 1, 0) {}

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
                           std::vector<std::size_t> col_indices, std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (row_offsets_.size() != rows_ + 1 || row_offsets_.front() != 0 || row_offsets_.back() != col_indices_.size() ||
      values_.size() != col_indices_.size()) {
    throw InvalidGraphError("inconsistent CSR arrays");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    if (row_offsets_[r] > row_offsets_[r + 1]) throw InvalidGraphError("CSR row offsets decrease");
    for (std::size_t p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
      if (col_indices_[p] >= cols_) throw InvalidGraphError("CSR column index out of range");
      if (p > row_offsets_[r] && col_indices_[p] <= col_indices_[p - 1]) {
        throw InvalidGraphError("CSR column indices not strictly increasing");
      }
      if (!std::isfinite(values_[p])) throw InvalidGraphError("CSR value not finite");
    }
  }
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row >= rows || t.col >= cols) throw InvalidGraphError("triplet index out of range");
  }
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  std::vector<std::size_t> offsets(rows + 1, 0);
  std::vector<std::size_t> cols_out;
  std::vector<double> vals;
  cols_out.reserve(triplets.size());
  vals.reserve(triplets.size());
  std::size_t last_row = rows;
  for (const auto& t : triplets) {
    if (t.row == last_row && !cols_out.empty() && cols_out.back() == t.col) {
      vals.back() += t.value;
      continue;
    }
    cols_out.push_back(t.col);
    vals.push_back(t.value);
    ++offsets[t.row + 1];
    last_row = t.row;
  }
  for (std::size_t r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
  return SparseMatrix(rows, cols, std::move(offsets), std::move(cols_out), std::move(vals));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::size_t> offsets(n + 1);
  std::vector<std::size_t> idx(n);
  std::iota(offsets.begin(), offsets.end(), std::size_t{0});
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return SparseMatrix(n, n, std::move(offsets), std::move(idx), std::vector<double>(n, 1.0));
}

bool SparseMatrix::contains(std::size_t r, std::size_t c) const {
  auto idx = row_indices(r);
  return std::binary_search(idx.begin(), idx.end(), c);
}

double SparseMatrix::value_at(std::size_t r, std::size_t c) const {
  auto idx = row_indices(r);
  auto it = std::lower_bound(idx.begin(), idx.end(), c);
  if (it == idx.end() || *it != c) return 0.0;
  return values_[row_offsets_[r] + static_cast<std::size_t>(it - idx.begin())];
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<std::size_t> offsets(cols_ + 1, 0);
  for (auto c : col_indices_) ++offsets[c + 1];
  for (std::size_t c = 0; c < cols_; ++c) offsets[c + 1] += offsets[c];
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  std::vector<std::size_t> idx(nnz());
  std::vector<double> vals(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
      const std::size_t dst = cursor[col_indices_[p]]++;
      idx[dst] = r;
      vals[dst] = values_[p];
    }
  }
  return SparseMatrix(cols_, rows_, std::move(offsets), std::move(idx), std::move(vals));
}

Tensor SparseMatrix::to_dense() const {
  Tensor out(Shape{rows_, cols_});
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) out.at(r, col_indices_[p]) = values_[p];
  }
  return out;
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) out.push_back({r, col_indices_[p], values_[p]});
  }
  return out;
}

SparseMatrix SparseMatrix::multiply(const SparseMatrix& other) const {
  if (cols_ != other.rows_) {
    throw DimensionError("sparse product of [" + std::to_string(rows_) + "x" + std::to_string(cols_) + "] and [" +
                         std::to_string(other.rows_) + "x" + std::to_string(other.cols_) + "]");
  }
  std::vector<std::size_t> offsets(rows_ + 1, 0);
  std::vector<std::size_t> idx;
  std::vector<double> vals;
  std::vector<double> acc(other.cols_, 0.0);
  std::vector<char> seen(other.cols_, 0);
  std::vector<std::size_t> touched;
  for (std::size_t r = 0; r < rows_; ++r) {
    touched.clear();
    for (std::size_t p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
      const std::size_t k = col_indices_[p];
      for (std::size_t q = other.row_offsets_[k]; q < other.row_offsets_[k + 1]; ++q) {
        const std::size_t c = other.col_indices_[q];
        if (!seen[c]) {
          seen[c] = 1;
          touched.push_back(c);
        }
        acc[c] += values_[p] * other.values_[q];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (auto c : touched) {
      idx.push_back(c);
      vals.push_back(acc[c]);
      acc[c] = 0.0;
      seen[c] = 0;
    }
    offsets[r + 1] = idx.size();
  }
  return SparseMatrix(rows_, other.cols_, std::move(offsets), std::move(idx), std::move(vals));
}

// ---------------------------------------------------------------------------

namespace kernels {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c.at(i, j) = s;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) mismatch("matmul_tn", a.shape(), b.shape());
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t(Shape{a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor spmm(const SparseMatrix& s, const Tensor& b) {
  require_matrix(b, "spmm");
  if (s.cols() != b.rows()) mismatch("spmm", Shape{s.rows(), s.cols()}, b.shape());
  const std::size_t n = b.cols();
  Tensor c(Shape{s.rows(), n});
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto idx = s.row_indices(r);
    auto val = s.row_values(r);
    auto crow = c.row(r);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      auto brow = b.row(idx[p]);
      for (std::size_t j = 0; j < n; ++j) crow[j] += val[p] * brow[j];
    }
  }
  return c;
}

Tensor spmm_t(const SparseMatrix& s, const Tensor& b) {
  require_matrix(b, "spmm_t");
  if (s.rows() != b.rows()) mismatch("spmm_t", Shape{s.cols(), s.rows()}, b.shape());
  const std::size_t n = b.cols();
  Tensor c(Shape{s.cols(), n});
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto idx = s.row_indices(r);
    auto val = s.row_values(r);
    auto brow = b.row(r);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      auto crow = c.row(idx[p]);
      for (std::size_t j = 0; j < n; ++j) crow[j] += val[p] * brow[j];
    }
  }
  return c;
}

}  // namespace kernels

}  // namespace ci4gi
