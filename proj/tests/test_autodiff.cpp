#include <cmath>
#include <random>

#include "ci4gi/autodiff.hpp"
#include "ci4gi/errors.hpp"
#include "ci4gi/gradcheck.hpp"
#include "doctest.h"

using namespace ci4gi;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Moves entries away from the kink of piecewise-linear ops.
Tensor away_from_zero(Tensor t, double margin) {
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

// Weighted sum so every output entry contributes a distinct gradient.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

void check_op(const char* name, const std::function<std::vector<Tensor>(std::mt19937_64&)>& make_inputs,
              const Builder& op, int trials = 100) {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < trials; ++trial) {
    auto inputs = make_inputs(rng);
    const std::uint64_t wseed = rng();
    auto result = check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, op(t, v), wseed); }, inputs);
    INFO(name << " trial " << trial << " worst " << result.worst);
    REQUIRE(result.passed);
  }
}

std::size_t dim(std::mt19937_64& rng) { return std::uniform_int_distribution<std::size_t>(1, 4)(rng); }

}  // namespace

TEST_CASE("elementwise examples") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(softplus(tape.constant(Tensor::scalar(0.0))).value().item() == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(softplus(tape.constant(Tensor::scalar(0.0))).value().item() == doctest::Approx(std::log(2.0)));
  CHECK(leaky_relu(tape.constant(Tensor::scalar(-1.0)), 0.2).value().item() == doctest::Approx(-0.2));
  CHECK(leaky_relu(tape.constant(Tensor::scalar(-1.0))).value().item() == doctest::Approx(-0.2));
}

TEST_CASE("elementwise domain errors") {
  Tape tape;
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), NumericDomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-2.0}))), NumericDomainError);
  CHECK_THROWS_AS(div(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({0.0}))),
                  NumericDomainError);
  CHECK_THROWS_AS(add(tape.constant(Tensor(Shape{2, 2})), tape.constant(Tensor(Shape{2, 3}))), DimensionError);
}

TEST_CASE("scalar-by-tensor broadcasting only") {
  Tape tape;
  Var s = tape.constant(Tensor::scalar(2.0));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(mul(s, m).value() == Tensor::matrix({{2, 4}, {6, 8}}));
  CHECK(sub(m, s).value() == Tensor::matrix({{-1, 0}, {1, 2}}));
  CHECK_THROWS_AS(add(m, tape.constant(Tensor::vector({1.0, 2.0}))), DimensionError);
}

TEST_CASE("rowwise examples") {
  Tape tape;
  auto seg = make_index({0, 0, 0});
  Var sm = segment_softmax(tape.constant(Tensor(Shape{3, 1}, 1.0)), seg, 1);
  for (double v : sm.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Var n = l2_normalize_rows(tape.constant(Tensor::matrix({{3, 4}})));
  CHECK(n.value().at(0, 0) == doctest::Approx(0.6));
  CHECK(n.value().at(0, 1) == doctest::Approx(0.8));

  Var ss = segment_sum(tape.constant(Tensor::matrix({{1}, {2}, {5}})), make_index({0, 0, 1}), 2);
  CHECK(ss.value() == Tensor::matrix({{3}, {5}}));

  CHECK(row_sum(tape.constant(Tensor::matrix({{1, 2}, {3, 4}}))).value() == Tensor::matrix({{3}, {7}}));
  CHECK(row_mean(tape.constant(Tensor::matrix({{1, 2}, {3, 4}}))).value() == Tensor::matrix({{1.5}, {3.5}}));
}

TEST_CASE("segment softmax rejects empty segments and sums to one") {
  Tape tape;
  CHECK_THROWS_AS(segment_softmax(tape.constant(Tensor(Shape{2, 1})), make_index({0, 2}), 3), InvalidGraphError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n_seg = 1 + rng() % 6;
    std::vector<std::size_t> ids;
    for (std::size_t s = 0; s < n_seg; ++s) ids.push_back(s);
    const std::size_t extra = rng() % 20;
    for (std::size_t e = 0; e < extra; ++e) ids.push_back(rng() % n_seg);
    std::shuffle(ids.begin(), ids.end(), rng);
    Var y = segment_softmax(tape.constant(random_tensor(Shape{ids.size(), 1}, rng, -30, 30)), make_index(ids), n_seg);
    std::vector<double> total(n_seg, 0.0);
    for (std::size_t e = 0; e < ids.size(); ++e) {
      CHECK(y.value()[e] > 0.0);
      total[ids[e]] += y.value()[e];
    }
    for (double t : total) CHECK(std::abs(t - 1.0) <= 1e-12);
  }
}

TEST_CASE("cosine examples and zero vector") {
  Tape tape;
  Var v = tape.constant(Tensor::vector({0.3, -1.2, 2.0}));
  CHECK(cosine(v, v).value().item() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cosine(tape.constant(Tensor::vector({1, 0})), tape.constant(Tensor::vector({0, 1}))).value().item() == 0.0);
  CHECK(cosine(tape.constant(Tensor::vector({1, 1})), tape.constant(Tensor::vector({1, 0}))).value().item() ==
        doctest::Approx(0.70711).epsilon(1e-5));
  CHECK_THROWS_AS(cosine(v, tape.constant(Tensor::vector({0, 0, 0}))), NumericDomainError);
}

TEST_CASE("backward examples") {
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    tape.backward(mul(x, x));
    CHECK(tape.grad(x)->item() == doctest::Approx(6.0));
  }
  {
    Tape tape;
    Var a = tape.leaf(Tensor::matrix({{1, 1}}));
    Var b = tape.constant(Tensor::matrix({{2}, {3}}));
    tape.backward(sum(matmul(a, b)));
    CHECK(*tape.grad(a) == Tensor::matrix({{2, 3}}));
    CHECK(tape.grad(b) == nullptr);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(0.0));
    tape.backward(sigmoid(scale(x, 2.0)));
    CHECK(tape.grad(x)->item() == doctest::Approx(0.5));
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(1.0));
    Var unused = tape.leaf(Tensor(Shape{2, 3}, 1.0));
    Var c = tape.constant(Tensor::scalar(4.0));
    tape.backward(mul(x, c));
    REQUIRE(tape.grad(unused) != nullptr);
    CHECK(tape.grad(unused)->shape() == Shape{2, 3});
    CHECK(tape.grad(c) == nullptr);
  }
}

TEST_CASE("backward usage errors") {
  Tape tape;
  Var c = tape.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(c), UsageError);
  Var x = tape.leaf(Tensor(Shape{2}));
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), UsageError);
}

TEST_CASE("finite-difference gradients of every differentiable op") {
  auto mat = [](std::mt19937_64& rng) { return Shape{dim(rng), dim(rng)}; };

  check_op(
      "add",
      [&](auto& rng) {
        Shape s = mat(rng);
        return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); });
  check_op(
      "sub",
      [&](auto& rng) {
        Shape s = mat(rng);
        return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); });
  check_op(
      "mul",
      [&](auto& rng) {
        Shape s = mat(rng);
        return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); });
  check_op(
      "mul-broadcast",
      [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{}, rng), random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); });
  check_op(
      "div",
      [&](auto& rng) {
        Shape s = mat(rng);
        return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng, 0.5, 2.0)};
      },
      [](Tape&, const std::vector<Var>& v) { return div(v[0], v[1]); });
  check_op(
      "exp", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return exp(v[0]); });
  check_op(
      "log", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng, 0.2, 3.0)}; },
      [](Tape&, const std::vector<Var>& v) { return log(v[0]); });
  check_op(
      "sigmoid", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng, -4, 4)}; },
      [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); });
  check_op(
      "leaky_relu", [&](auto& rng) { return std::vector<Tensor>{away_from_zero(random_tensor(mat(rng), rng), 1e-3)}; },
      [](Tape&, const std::vector<Var>& v) { return leaky_relu(v[0]); });
  check_op(
      "softplus", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng, -4, 4)}; },
      [](Tape&, const std::vector<Var>& v) { return softplus(v[0]); });
  check_op(
      "scale", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7); });
  check_op(
      "add_scalar", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return add_scalar(v[0], 0.3); });
  check_op(
      "matmul",
      [&](auto& rng) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        return std::vector<Tensor>{random_tensor(Shape{m, k}, rng), random_tensor(Shape{k, n}, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
  check_op(
      "spmm",
      [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{4, dim(rng)}, rng)}; },
      [](Tape&, const std::vector<Var>& v) {
        auto s = std::make_shared<const SparseMatrix>(
            SparseMatrix::from_triplets(3, 4, {{0, 1, 0.5}, {0, 3, -2.0}, {2, 0, 1.5}, {2, 1, 0.25}}));
        return spmm(s, v[0]);
      });
  check_op(
      "transpose", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); });
  check_op(
      "row_sum", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return row_sum(v[0]); });
  check_op(
      "row_mean", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return row_mean(v[0]); });
  check_op(
      "l2_normalize_rows",
      [&](auto& rng) { return std::vector<Tensor>{away_from_zero(random_tensor(mat(rng), rng), 0.1)}; },
      [](Tape&, const std::vector<Var>& v) { return l2_normalize_rows(v[0]); });
  check_op(
      "segment_softmax", [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{6, 1}, rng, -2, 2)}; },
      [](Tape&, const std::vector<Var>& v) { return segment_softmax(v[0], make_index({1, 0, 1, 2, 1, 0}), 3); });
  check_op(
      "segment_sum", [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{5, dim(rng)}, rng)}; },
      [](Tape&, const std::vector<Var>& v) { return segment_sum(v[0], make_index({2, 0, 2, 1, 2}), 3); });
  check_op(
      "gather_rows", [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{4, dim(rng)}, rng)}; },
      [](Tape&, const std::vector<Var>& v) { return gather_rows(v[0], make_index({3, 0, 3, 1})); });
  check_op(
      "concat_rows",
      [&](auto& rng) {
        const std::size_t d = dim(rng);
        return std::vector<Tensor>{random_tensor(Shape{dim(rng), d}, rng), random_tensor(Shape{dim(rng), d}, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return concat_rows({v[0], v[1], v[0]}); });
  check_op(
      "slice_rows", [&](auto& rng) { return std::vector<Tensor>{random_tensor(Shape{5, dim(rng)}, rng)}; },
      [](Tape&, const std::vector<Var>& v) { return slice_rows(v[0], 1, 4); });
  check_op(
      "add_bias",
      [&](auto& rng) {
        const std::size_t d = dim(rng);
        return std::vector<Tensor>{random_tensor(Shape{dim(rng), d}, rng), random_tensor(Shape{1, d}, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return add_bias(v[0], v[1]); });
  check_op(
      "scale_rows",
      [&](auto& rng) {
        const std::size_t n = dim(rng);
        return std::vector<Tensor>{random_tensor(Shape{n, dim(rng)}, rng), random_tensor(Shape{n, 1}, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return scale_rows(v[0], v[1]); });
  check_op(
      "sum", [&](auto& rng) { return std::vector<Tensor>{random_tensor(mat(rng), rng)}; },
      [](Tape&, const std::vector<Var>& v) { return sum(v[0]); });
  check_op(
      "cosine",
      [&](auto& rng) {
        const std::size_t d = 1 + dim(rng);
        return std::vector<Tensor>{random_tensor(Shape{d}, rng), random_tensor(Shape{d}, rng)};
      },
      [](Tape&, const std::vector<Var>& v) { return cosine(v[0], v[1]); });
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var a = tape.leaf(random_tensor(Shape{4, 3}, rng));
    Var b = tape.leaf(random_tensor(Shape{3, 2}, rng));
    Var loss = sum(softplus(matmul(l2_normalize_rows(a), b)));
    tape.backward(loss);
    return std::make_tuple(loss.value().item(), *tape.grad(a), *tape.grad(b));
  };
  CHECK(run() == run());
}

TEST_CASE("injected sign fault is caught by the gradient checker") {
  std::mt19937_64 rng(1);
  std::vector<Tensor> inputs{random_tensor(Shape{3, 2}, rng)};
  auto build = [](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0])); };
  CHECK(check_gradients(build, inputs).passed);
  testing::inject_backward_sign_fault(OpKind::Sigmoid);
  CHECK_FALSE(check_gradients(build, inputs).passed);
  testing::clear_backward_faults();
  CHECK(check_gradients(build, inputs).passed);
}
