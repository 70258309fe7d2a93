#include <algorithm>
#include <cmath>
#include <random>

#include "ci4gi/errors.hpp"
#include "ci4gi/gradcheck.hpp"
#include "ci4gi/losses.hpp"
#include "doctest.h"

using namespace ci4gi;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

double cos_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    dot += a.at(i, k) * b.at(j, k);
    na += a.at(i, k) * a.at(i, k);
    nb += b.at(j, k) * b.at(j, k);
  }
  return dot / std::sqrt(na * nb);
}

// Scalar loop over anchors straight from the loss definition.
double infonce_oracle(const Tensor& v, const Tensor& s, const NegativeMask& m, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    if (m.count(i) == 0) continue;
    const double pos = std::exp(cos_rows(v, i, s, i) / tau);
    double denom = pos;
    for (std::size_t j = 0; j < v.rows(); ++j) {
      if (!m.negative(i, j)) continue;
      denom += std::exp(cos_rows(v, j, s, i) / tau) + std::exp(cos_rows(v, i, s, j) / tau);
    }
    total -= std::log(pos / denom);
  }
  return total;
}

double bpr_value(const Tensor& pos, const Tensor& neg) {
  Tape tape(false);
  return bpr_loss(tape.constant(pos), tape.constant(neg)).value().item();
}

double vanilla_value(const Tensor& v, const Tensor& s, double tau) {
  Tape tape(false);
  return infonce_vanilla(tape.constant(v), tape.constant(s), tau).value().item();
}

std::vector<double> row_vec(const Tensor& t, std::size_t r) { return {t.row(r).begin(), t.row(r).end()}; }

}  // namespace

TEST_CASE("bpr: examples and errors") {
  CHECK(bpr_value(Tensor::matrix({{0.3}, {-2.0}}), Tensor::matrix({{0.3}, {-2.0}})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(bpr_value(Tensor::matrix({{1.5}}), Tensor::matrix({{0.5}})) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK(bpr_value(Tensor::matrix({{1.0}}), Tensor::matrix({{0.0}})) ==
        doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-1.0)))).epsilon(1e-14));
  CHECK(bpr_value(Tensor::matrix({{800.0}}), Tensor::matrix({{0.0}})) == 0.0);
  CHECK(bpr_value(Tensor::matrix({{-800.0}}), Tensor::matrix({{0.0}})) == doctest::Approx(800.0));
  Tape tape(false);
  CHECK_THROWS_AS(bpr_loss(tape.constant(Tensor(Shape{0, 1})), tape.constant(Tensor(Shape{0, 1}))), UsageError);
  CHECK_THROWS_AS(bpr_loss(tape.constant(Tensor(Shape{2, 1})), tape.constant(Tensor(Shape{3, 1}))), DimensionError);
}

TEST_CASE("w2: closed-form examples") {
  CHECK(w2_diag_gauss(std::vector{0.5, 1.0}, std::vector{1.0, 2.0}, std::vector{0.5, 1.0}, std::vector{1.0, 2.0}) ==
        0.0);
  CHECK(w2_diag_gauss(std::vector{0.0, 0.0}, std::vector{1.0, 1.0}, std::vector{3.0, 4.0}, std::vector{1.0, 1.0}) ==
        doctest::Approx(5.0).epsilon(1e-15));
  CHECK(w2_diag_gauss(std::vector{0.0, 0.0}, std::vector{1.0, 1.0}, std::vector{3.0, 4.0}, std::vector{2.0, 2.0}) ==
        doctest::Approx(std::sqrt(27.0)).epsilon(1e-15));
  CHECK_THROWS_AS(w2_diag_gauss(std::vector{0.0}, std::vector{0.0}, std::vector{0.0}, std::vector{1.0}),
                  NumericDomainError);
  CHECK_THROWS_AS(w2_diag_gauss(std::vector{0.0}, std::vector{-1.0}, std::vector{0.0}, std::vector{1.0}),
                  NumericDomainError);
}

TEST_CASE("w2: sorted-sample coupling in one dimension") {
  std::mt19937_64 rng(17);
  const std::size_t n = 100000;
  for (auto [m1, s1, m2, s2] : {std::array{0.0, 1.0, 1.0, 2.0}, std::array{-2.0, 0.5, 1.5, 0.3}}) {
    std::normal_distribution<double> a(m1, s1), b(m2, s2);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = a(rng);
    for (auto& v : y) v = b(rng);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    const double empirical = std::sqrt(acc / static_cast<double>(n));
    const double exact = w2_diag_gauss(std::vector{m1}, std::vector{s1}, std::vector{m2}, std::vector{s2});
    CHECK(std::abs(empirical - exact) / exact < 0.02);
  }
}

TEST_CASE("w2: metric axioms on random triples") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> mean(-3, 3), sd(0.01, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng() % 5;
    std::vector<std::vector<double>> m(3, std::vector<double>(d)), s(3, std::vector<double>(d));
    for (int k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        m[k][j] = mean(rng);
        s[k][j] = sd(rng);
      }
    const double ab = w2_diag_gauss(m[0], s[0], m[1], s[1]);
    const double ba = w2_diag_gauss(m[1], s[1], m[0], s[0]);
    const double bc = w2_diag_gauss(m[1], s[1], m[2], s[2]);
    const double ac = w2_diag_gauss(m[0], s[0], m[2], s[2]);
    REQUIRE(ab == ba);
    REQUIRE(ac <= ab + bc + 1e-12);
    REQUIRE(ab >= 0.0);
  }
}

TEST_CASE("negative masks") {
  const std::vector<std::size_t> ids = {4, 7, 4, 9};
  auto m = in_batch_negatives(ids);
  for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(m.negative(i, i));
  CHECK_FALSE(m.negative(0, 2));
  CHECK_FALSE(m.negative(2, 0));
  CHECK(m.negative(0, 1));
  CHECK(m.count(0) == 2);
  CHECK(m.count(1) == 3);

  Tensor means = Tensor::matrix({{0, 0}, {3, 4}, {0, 0}, {0.5, 0}});
  Tensor stds = Tensor::matrix({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  auto w = wasserstein_negatives(ids, means, stds, 1.0);
  CHECK(w.negative(0, 1));
  CHECK_FALSE(w.negative(0, 3));  // distance 0.5
  CHECK_FALSE(w.negative(0, 2));  // same user
  CHECK(w.negative(3, 1));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(w.negative(i, j) == w.negative(j, i));
}

TEST_CASE("infonce: examples") {
  SUBCASE("single user has no negatives") {
    CHECK(vanilla_value(Tensor::matrix({{1.0, 2.0}}), Tensor::matrix({{-1.0, 0.5}}), 1.0) == 0.0);
  }
  SUBCASE("two identical users") {
    Tensor t = Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}});
    CHECK(vanilla_value(t, t, 1.0) == doctest::Approx(2 * std::log(3.0)).epsilon(1e-14));
  }
  SUBCASE("duplicate user ids are not negatives of each other") {
    Tensor t = Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}});
    Tape tape(false);
    std::vector<std::size_t> ids = {3, 3};
    CHECK(infonce_vanilla(tape.constant(t), tape.constant(t), 1.0, ids).value().item() == 0.0);
  }
  SUBCASE("monotone in positive similarity with negatives fixed") {
    // negatives sit on the third axis, orthogonal to the anchor plane
    auto at = [](double c) {
      Tensor v = Tensor::matrix({{c, std::sqrt(1 - c * c), 0.0}, {0.0, 0.0, 1.0}});
      Tensor s = Tensor::matrix({{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}});
      return vanilla_value(v, s, 1.0);
    };
    const double lo = at(0.2), hi = at(0.8);
    CHECK(hi < lo);
    const double anchor1 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(lo == doctest::Approx(-std::log(std::exp(0.2) / (std::exp(0.2) + 2.0)) + anchor1).epsilon(1e-13));
    CHECK(hi == doctest::Approx(-std::log(std::exp(0.8) / (std::exp(0.8) + 2.0)) + anchor1).epsilon(1e-13));
  }
  SUBCASE("zero row") {
    Tape tape(false);
    CHECK_THROWS_AS(infonce_vanilla(tape.constant(Tensor::matrix({{0.0, 0.0}, {1.0, 0.0}})),
                                    tape.constant(Tensor::matrix({{1.0, 0.0}, {1.0, 0.0}})), 1.0),
                    NumericDomainError);
  }
}

TEST_CASE("infonce: matches the scalar oracle on random batches") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 6, d = 1 + rng() % 4;
    const double tau = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
    Tensor v = random_tensor({b, d}, rng), s = random_tensor({b, d}, rng);
    Tensor means = random_tensor({b, d}, rng), stds = random_tensor({b, d}, rng, 0.1, 1.0);
    std::vector<std::size_t> ids(b);
    for (auto& id : ids) id = rng() % 5;
    const double threshold = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    Tape tape(false);
    const double vanilla = infonce_vanilla(tape.constant(v), tape.constant(s), tau, ids).value().item();
    const double filtered =
        infonce_filtered(tape.constant(v), tape.constant(s), means, stds, tau, threshold, ids).value().item();
    CHECK(vanilla == doctest::Approx(infonce_oracle(v, s, in_batch_negatives(ids), tau)).epsilon(1e-12));
    CHECK(filtered ==
          doctest::Approx(infonce_oracle(v, s, wasserstein_negatives(ids, means, stds, threshold), tau)).epsilon(1e-12));
    CHECK(vanilla >= 0.0);
    CHECK(filtered >= 0.0);
  }
}

TEST_CASE("infonce filtered: threshold limits") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2 + rng() % 5, d = 1 + rng() % 4;
    Tensor v = random_tensor({b, d}, rng), s = random_tensor({b, d}, rng);
    Tensor means = random_tensor({b, d}, rng), stds = random_tensor({b, d}, rng, 0.1, 1.0);
    Tape tape(false);
    const double vanilla = infonce_vanilla(tape.constant(v), tape.constant(s), 0.5).value().item();
    const double at_zero = infonce_filtered(tape.constant(v), tape.constant(s), means, stds, 0.5, 0.0).value().item();
    const double at_inf =
        infonce_filtered(tape.constant(v), tape.constant(s), means, stds, 0.5, INFINITY).value().item();
    CHECK(std::abs(at_zero - vanilla) <= 1e-12);
    CHECK(at_inf == 0.0);
  }
}

TEST_CASE("infonce filtered: a distribution clone drops out of the anchor's negatives") {
  Tensor v = Tensor::matrix({{1.0, 0.2}, {0.3, 1.0}, {-0.5, 0.4}});
  Tensor s = Tensor::matrix({{0.8, -0.1}, {0.1, 0.9}, {-0.2, 1.0}});
  Tensor means = Tensor::matrix({{5.0, 5.0}, {0.0, 1.0}, {0.0, 1.0}});
  Tensor stds = Tensor::matrix({{1.0, 1.0}, {0.5, 0.5}, {0.5, 0.5}});
  Tape tape(false);
  const double got = infonce_filtered(tape.constant(v), tape.constant(s), means, stds, 1.0, 1.5).value().item();
  auto e = [&](std::size_t i, std::size_t j) { return std::exp(cos_rows(v, i, s, j)); };
  const double a0 = -std::log(e(0, 0) / (e(0, 0) + e(1, 0) + e(0, 1) + e(2, 0) + e(0, 2)));
  const double a1 = -std::log(e(1, 1) / (e(1, 1) + e(0, 1) + e(1, 0)));
  const double a2 = -std::log(e(2, 2) / (e(2, 2) + e(0, 2) + e(2, 0)));
  CHECK(got == doctest::Approx(a0 + a1 + a2).epsilon(1e-13));
}

TEST_CASE("anneal beta") {
  CHECK(anneal_beta(20, 0.1, 20) == 0.5);
  CHECK(anneal_beta(30, 0.1, 20) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(anneal_beta(0, 0.1, 20) == doctest::Approx(0.119203).epsilon(1e-6));
  double prev = 0;
  for (int epoch = 0; epoch < 200; ++epoch) {
    const double b = anneal_beta(epoch, 0.1, 30);
    CHECK(b > prev);
    CHECK(b < 1.0);
    prev = b;
  }
}

TEST_CASE("total loss") {
  LossConfig cfg;
  cfg.lambda1 = 0.1;
  cfg.lambda2 = 0.0;
  Tape tape(false);
  Var main = tape.constant(Tensor::scalar(1.0)), ssl1 = tape.constant(Tensor::scalar(2.0)),
      ssl2 = tape.constant(Tensor::scalar(4.0)), reg = tape.constant(Tensor::scalar(7.0));
  CHECK(total_loss(main, ssl1, ssl2, reg, cfg, cfg.e_anneal).value().item() == doctest::Approx(1.3).epsilon(1e-15));

  cfg.lambda1 = 0.0;
  CHECK(total_loss(main, ssl1, ssl2, reg, cfg, 3).value().item() == 1.0);

  cfg.lambda1 = 0.2;
  Var same = tape.constant(Tensor::scalar(3.0));
  CHECK(total_loss(main, same, same, reg, cfg, 55).value().item() == doctest::Approx(1.6).epsilon(1e-14));

  cfg.lambda2 = 0.5;
  CHECK(total_loss(main, same, same, reg, cfg, 0, {.const_beta = 0.25}).value().item() ==
        doctest::Approx(1.0 + 0.2 * 3.0 + 3.5).epsilon(1e-14));

  cfg.lambda2 = 0;
  cfg.lambda1 = 1.0;
  const double b = anneal_beta(10, cfg.k_anneal, cfg.e_anneal);
  CHECK(total_loss(main, ssl1, ssl2, Var{}, cfg, 10).value().item() ==
        doctest::Approx(1 + b * 2 + (1 - b) * 4).epsilon(1e-14));
  CHECK(total_loss(main, ssl1, ssl2, Var{}, cfg, 10, {.swap_anneal_weights = true}).value().item() ==
        doctest::Approx(1 + (1 - b) * 2 + b * 4).epsilon(1e-14));
  CHECK(total_loss(main, Var{}, ssl2, Var{}, cfg, 10).value().item() == doctest::Approx(1 + (1 - b) * 4).epsilon(1e-14));
}

TEST_CASE("losses: gradient checks") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 1 + rng() % 5, d = 1 + rng() % 4;
    const double tau = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
    std::vector<std::size_t> ids(b);
    for (auto& id : ids) id = rng() % 4;
    Tensor means = random_tensor({b, d}, rng), stds = random_tensor({b, d}, rng, 0.1, 1.0);
    const double threshold = std::uniform_real_distribution<double>(0.0, 1.5)(rng);
    std::vector<Tensor> inputs = {random_tensor({b, d}, rng), random_tensor({b, d}, rng),
                                  random_tensor({b, 1}, rng, -3, 3), random_tensor({b, 1}, rng, -3, 3)};
    LossConfig cfg;
    cfg.lambda1 = 0.3;
    cfg.lambda2 = 0.05;
    auto build = [&](Tape&, const std::vector<Var>& x) {
      Var ssl1 = infonce_vanilla(x[0], x[1], tau, ids);
      Var ssl2 = infonce_filtered(x[0], x[1], means, stds, tau, threshold, ids);
      return total_loss(bpr_loss(x[2], x[3]), ssl1, ssl2, squared_norm(x), cfg, trial);
    };
    auto result = check_gradients(build, inputs);
    INFO("trial " << trial << " worst " << result.worst);
    REQUIRE(result.passed);
  }
}

TEST_CASE("squared norm") {
  Tape tape(false);
  Var a = tape.constant(Tensor::matrix({{1, -2}, {3, 0}}));
  Var b = tape.constant(Tensor::vector({0.5}));
  CHECK(squared_norm({a, b}).value().item() == 14.25);
  CHECK_THROWS_AS(squared_norm({}), UsageError);
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.mu_w2 = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
