#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ci4gi/errors.hpp"
#include "ci4gi/metrics.hpp"
#include "doctest.h"

using namespace ci4gi;

namespace {

double gain(std::size_t position) { return 1.0 / std::log2(static_cast<double>(position) + 2.0); }

double dcg(const std::vector<std::size_t>& ranking, const std::vector<char>& rel, std::size_t k) {
  double total = 0;
  for (std::size_t p = 0; p < std::min(k, ranking.size()); ++p)
    if (rel[ranking[p]]) total += gain(p);
  return total;
}

}  // namespace

TEST_CASE("metrics: hand examples") {
  std::vector<std::size_t> ranking(20);
  std::iota(ranking.begin(), ranking.end(), 0);
  auto first = ranking_metrics(ranking, std::vector<std::size_t>{0}, 10);
  CHECK(first.recall == 1.0);
  CHECK(first.ndcg == 1.0);
  auto second = ranking_metrics(ranking, std::vector<std::size_t>{1}, 10);
  CHECK(second.recall == 1.0);
  CHECK(second.ndcg == doctest::Approx(0.63093).epsilon(1e-5));
  auto split = ranking_metrics(ranking, std::vector<std::size_t>{0, 15}, 10);
  CHECK(split.recall == 0.5);
  CHECK(split.ndcg == doctest::Approx(0.61315).epsilon(1e-5));
  CHECK_THROWS_AS(ranking_metrics(ranking, std::vector<std::size_t>{}, 10), UsageError);
}

TEST_CASE("metrics: every permutation of small universes against enumeration") {
  std::mt19937_64 rng(3);
  for (std::size_t n = 1; n <= 8; ++n) {
    for (int draw = 0; draw < 3; ++draw) {
      std::vector<char> rel(n, 0);
      std::vector<std::size_t> relevant;
      for (std::size_t g = 0; g < n; ++g)
        if (rng() % 2) rel[g] = 1;
      if (std::count(rel.begin(), rel.end(), 1) == 0) rel[rng() % n] = 1;
      for (std::size_t g = 0; g < n; ++g)
        if (rel[g]) relevant.push_back(g);

      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::vector<std::vector<std::size_t>> all;
      do all.push_back(perm);
      while (std::next_permutation(perm.begin(), perm.end()));

      for (std::size_t k = 1; k <= n + 1; ++k) {
        double ideal = 0;
        for (const auto& p : all) ideal = std::max(ideal, dcg(p, rel, k));
        for (const auto& p : all) {
          std::size_t hits = 0;
          for (std::size_t i = 0; i < std::min(k, n); ++i) hits += rel[p[i]];
          auto m = ranking_metrics(p, relevant, k);
          REQUIRE(m.recall == static_cast<double>(hits) / static_cast<double>(relevant.size()));
          REQUIRE(m.ndcg == dcg(p, rel, k) / ideal);
          REQUIRE(m.ndcg <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("ranking ties break by group id") {
  std::vector<double> scores = {0.5, 0.9, 0.5, 0.9, 0.1};
  CHECK(rank_candidates(scores) == std::vector<std::size_t>{1, 3, 0, 2, 4});
  std::vector<char> excluded = {0, 1, 0, 0, 0};
  CHECK(rank_candidates(scores, excluded) == std::vector<std::size_t>{3, 0, 2, 4});
}

namespace {

InteractionDataset three_split_toy() {
  InteractionDataset ds;
  ds.n_users = 3;
  ds.n_items = 1;
  ds.n_groups = 4;
  ds.user_item = SparseMatrix::from_triplets(3, 1, {{0, 0, 1}, {1, 0, 1}, {2, 0, 1}});
  ds.group_item = SparseMatrix::from_triplets(4, 1, {{0, 0, 1}});
  ds.train = SparseMatrix::from_triplets(3, 4, {{0, 0, 1}, {1, 0, 1}, {2, 1, 1}});
  ds.validation = SparseMatrix::from_triplets(3, 4, {{0, 1, 1}});
  ds.test = SparseMatrix::from_triplets(3, 4, {{0, 2, 1}, {1, 3, 1}});
  ds.users = IdMap::identity(3);
  ds.items = IdMap::identity(1);
  ds.groups = IdMap::identity(4);
  return ds;
}

}  // namespace

TEST_CASE("evaluate_scores: candidate exclusion per split") {
  auto ds = three_split_toy();
  // every user prefers groups in id order 0 > 1 > 2 > 3
  Tensor scores = Tensor::matrix({{4, 3, 2, 1}, {4, 3, 2, 1}, {4, 3, 2, 1}});

  auto test = evaluate_scores(scores, ds, Split::Test, {1, 2});
  // user 0: train {0} and validation {1} excluded, so test group 2 ranks first.
  // user 1: train {0} excluded; ranking 1, 2, 3 puts test group 3 third.
  CHECK(test.n_evaluated == 2);
  CHECK(test.n_without_heldout == 1);
  CHECK(test.recall_at(1) == 0.5);
  CHECK(test.ndcg_at(2) == 0.5);

  auto val = evaluate_scores(scores, ds, Split::Validation, {1});
  CHECK(val.n_evaluated == 1);
  CHECK(val.recall_at(1) == 1.0);

  // training diagnostics rank against nothing held out: user 2's group 1 is
  // second behind group 0 even though group 0 is nobody's held-out pair
  auto tr = evaluate_scores(scores, ds, Split::Train, {1});
  CHECK(tr.n_evaluated == 3);
  CHECK(tr.recall_at(1) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(tr.recall_at(7), UsageError);
  CHECK_THROWS_AS(evaluate_scores(Tensor(Shape{2, 4}), ds, Split::Test, {1}), DimensionError);
}

TEST_CASE("evaluate_scores: users with every group excluded are counted") {
  auto ds = three_split_toy();
  ds.train = SparseMatrix::from_triplets(3, 4, {{1, 0, 1}, {1, 1, 1}, {1, 2, 1}, {1, 3, 1}, {0, 0, 1}});
  ds.test = SparseMatrix::from_triplets(3, 4, {{0, 2, 1}, {1, 3, 1}});
  auto r = evaluate_scores(Tensor(Shape{3, 4}), ds, Split::Test, {1});
  CHECK(r.n_without_candidates == 1);
  CHECK(r.n_evaluated == 1);
}

TEST_CASE("popularity scores count training members") {
  auto ds = three_split_toy();
  Tensor p = popularity_scores(ds);
  CHECK(p.at(0, 0) == 2.0);
  CHECK(p.at(2, 1) == 1.0);
  CHECK(p.at(1, 3) == 0.0);
}
