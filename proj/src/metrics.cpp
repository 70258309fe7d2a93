#include "ci4gi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ci4gi/errors.hpp"

namespace ci4gi {

std::vector<std::size_t> rank_candidates(std::span<const double> scores, std::span<const char> excluded) {
  if (!excluded.empty() && excluded.size() != scores.size()) {
    throw DimensionError("rank_candidates: exclusion mask length differs from score count");
  }
  std::vector<std::size_t> ids;
  ids.reserve(scores.size());
  for (std::size_t g = 0; g < scores.size(); ++g)
    if (excluded.empty() || !excluded[g]) ids.push_back(g);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return ids;
}

RankingMetrics ranking_metrics(std::span<const std::size_t> ranking, std::span<const std::size_t> relevant,
                               std::size_t k) {
  if (relevant.empty()) throw UsageError("ranking_metrics: empty relevant set");
  if (k == 0) throw UsageError("ranking_metrics: K must be positive");
  double dcg = 0.0;
  std::size_t hits = 0;
  const std::size_t depth = std::min(k, ranking.size());
  for (std::size_t r = 0; r < depth; ++r) {
    if (std::find(relevant.begin(), relevant.end(), ranking[r]) != relevant.end()) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return {static_cast<double>(hits) / static_cast<double>(relevant.size()), dcg / idcg};
}

namespace {

std::size_t index_of(const std::vector<std::size_t>& ks, std::size_t k) {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw UsageError("metrics report has no K=" + std::to_string(k));
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double MetricsReport::recall_at(std::size_t k) const { return recall.at(index_of(ks, k)); }
double MetricsReport::ndcg_at(std::size_t k) const { return ndcg.at(index_of(ks, k)); }

MetricsReport evaluate_scores(const Tensor& scores, const InteractionDataset& ds, Split split,
                              const std::vector<std::size_t>& ks) {
  if (scores.rows() != ds.n_users || scores.cols() != ds.n_groups) {
    throw DimensionError("evaluate_scores: score matrix " + shape_string(scores.shape()) + " for " +
                         std::to_string(ds.n_users) + " users and " + std::to_string(ds.n_groups) + " groups");
  }
  if (ks.empty()) throw UsageError("evaluate_scores: no cutoffs");
  const SparseMatrix& target = ds.split(split);
  if (target.nnz() == 0) throw UsageError("evaluate_scores: split '" + std::string(split_name(split)) + "' is empty");

  std::vector<const SparseMatrix*> exclude;
  if (split != Split::Train) exclude.push_back(&ds.train);
  if (split == Split::Test) exclude.push_back(&ds.validation);

  MetricsReport report;
  report.split = split_name(split);
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  std::vector<char> mask(ds.n_groups);
  for (std::size_t u = 0; u < ds.n_users; ++u) {
    auto relevant = target.row_indices(u);
    if (relevant.empty()) {
      ++report.n_without_heldout;
      continue;
    }
    std::fill(mask.begin(), mask.end(), 0);
    for (const SparseMatrix* m : exclude)
      for (std::size_t g : m->row_indices(u)) mask[g] = 1;
    auto ranking = rank_candidates(scores.row(u), mask);
    if (ranking.empty()) {
      ++report.n_without_candidates;
      continue;
    }
    ++report.n_evaluated;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      auto m = ranking_metrics(ranking, relevant, ks[i]);
      report.recall[i] += m.recall;
      report.ndcg[i] += m.ndcg;
    }
  }
  if (report.n_evaluated > 0) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      report.recall[i] /= static_cast<double>(report.n_evaluated);
      report.ndcg[i] /= static_cast<double>(report.n_evaluated);
    }
  }
  return report;
}

Tensor popularity_scores(const InteractionDataset& ds) {
  std::vector<double> members(ds.n_groups, 0.0);
  for (const auto& t : ds.train.triplets()) members[t.col] += 1.0;
  Tensor scores(Shape{ds.n_users, ds.n_groups});
  for (std::size_t u = 0; u < ds.n_users; ++u) std::copy(members.begin(), members.end(), scores.row(u).begin());
  return scores;
}

}  // namespace ci4gi
