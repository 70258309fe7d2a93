#include <random>

#include "ci4gi/errors.hpp"
#include "ci4gi/tensor.hpp"
#include "doctest.h"

using namespace ci4gi;

namespace {

// Independent reference: textbook triple loop over dense operands.
Tensor naive_product(const Tensor& a, const Tensor& b) {
  Tensor c(Shape{a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor random_dense(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(Shape{r, c});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

SparseMatrix random_sparse(std::size_t r, std::size_t c, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution keep(density);
  std::vector<Triplet> trip;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (keep(rng)) trip.push_back({i, j, u(rng)});
  return SparseMatrix::from_triplets(r, c, std::move(trip));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor construction validates buffer length") {
  CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor s = Tensor::scalar(3.5);
  CHECK(s.rank() == 0);
  CHECK(s.item() == 3.5);
  CHECK_THROWS_AS(Tensor(Shape{2}).item(), DimensionError);
}

TEST_CASE("matmul: identity and hand-expanded product") {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Tensor m = Tensor::matrix({{0.3, -2}, {7, 4.5}});
  CHECK(kernels::matmul(eye, m) == m);

  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor b = Tensor::matrix({{0}, {1}});
  CHECK(kernels::matmul(a, b) == Tensor::matrix({{2}, {4}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a(Shape{2, 3});
  Tensor b(Shape{2, 3});
  try {
    kernels::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("transposed product kernels agree with the naive product") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_dense(5, 4, rng);
    Tensor b = random_dense(6, 4, rng);
    Tensor c = random_dense(5, 3, rng);
    CHECK(max_abs_diff(kernels::matmul_nt(a, b), naive_product(a, kernels::transpose(b))) < 1e-12);
    CHECK(max_abs_diff(kernels::matmul_tn(a, c), naive_product(kernels::transpose(a), c)) < 1e-12);
  }
}

TEST_CASE("spmm: zero, identity and dense oracle") {
  std::mt19937_64 rng(11);
  Tensor b = random_dense(4, 3, rng);

  SparseMatrix empty(5, 4);
  CHECK(kernels::spmm(empty, b) == Tensor(Shape{5, 3}));
  CHECK(kernels::spmm(SparseMatrix::identity(4), b) == b);

  SparseMatrix s = random_sparse(5, 4, 0.3, rng);
  CHECK(max_abs_diff(kernels::spmm(s, b), naive_product(s.to_dense(), b)) <= 1e-12);

  CHECK_THROWS_AS(kernels::spmm(s, random_dense(3, 3, rng)), DimensionError);
}

TEST_CASE("spmm equals dense oracle on random instances up to 64x64") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    SparseMatrix s = random_sparse(m, k, 0.2, rng);
    Tensor b = random_dense(k, n, rng);
    CHECK(max_abs_diff(kernels::spmm(s, b), naive_product(s.to_dense(), b)) <= 1e-12);
    Tensor g = random_dense(m, n, rng);
    CHECK(max_abs_diff(kernels::spmm_t(s, g), naive_product(kernels::transpose(s.to_dense()), g)) <= 1e-12);
  }
}

TEST_CASE("sparse matrix invariants") {
  CHECK_THROWS_AS(SparseMatrix(2, 2, {0, 2, 1}, {0, 1}, {1.0, 1.0}), InvalidGraphError);
  CHECK_THROWS_AS(SparseMatrix(1, 3, {0, 2}, {2, 1}, {1.0, 1.0}), InvalidGraphError);
  CHECK_THROWS_AS(SparseMatrix(1, 3, {0, 1}, {3}, {1.0}), InvalidGraphError);

  SparseMatrix s = SparseMatrix::from_triplets(3, 3, {{2, 1, 1.0}, {0, 2, 2.0}, {2, 1, 0.5}, {0, 0, -1.0}});
  CHECK(s.nnz() == 3);
  CHECK(s.row_offsets().back() == s.nnz());
  CHECK(s.value_at(2, 1) == 1.5);
  CHECK(s.contains(0, 2));
  CHECK_FALSE(s.contains(1, 1));
  CHECK(s.transpose().transpose() == s);
  CHECK(s.transpose().to_dense() == kernels::transpose(s.to_dense()));
}

TEST_CASE("sparse-sparse product matches dense") {
  std::mt19937_64 rng(5);
  SparseMatrix a = random_sparse(7, 5, 0.4, rng);
  SparseMatrix b = random_sparse(5, 6, 0.4, rng);
  CHECK(max_abs_diff(a.multiply(b).to_dense(), naive_product(a.to_dense(), b.to_dense())) < 1e-12);
}
