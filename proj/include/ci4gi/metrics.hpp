#pragma once

#include <span>
#include <string>
#include <vector>

#include "ci4gi/dataset.hpp"
#include "ci4gi/tensor.hpp"

namespace ci4gi {

struct RankingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

/// Candidate ids by descending score; ties keep ascending id order.
/// Ids with excluded[id] set are left out.
std::vector<std::size_t> rank_candidates(std::span<const double> scores, std::span<const char> excluded = {});

/// Recall@K and binary-gain NDCG@K of a ranking against a non-empty relevant set.
RankingMetrics ranking_metrics(std::span<const std::size_t> ranking, std::span<const std::size_t> relevant,
                               std::size_t k);

struct MetricsReport {
  std::string split;
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // parallel to ks
  std::vector<double> ndcg;
  std::size_t n_evaluated = 0;
  std::size_t n_without_heldout = 0;     // users with nothing to predict
  std::size_t n_without_candidates = 0;  // users whose every group is excluded
  std::size_t epoch = 0;
  double wall_time = 0.0;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Ranks every group for each user with held-out memberships in `split`.
/// Candidates exclude training memberships for validation, training and
/// validation memberships for test, and nothing for the training split itself.
MetricsReport evaluate_scores(const Tensor& scores, const InteractionDataset& ds, Split split,
                              const std::vector<std::size_t>& ks);

// Every user gets the same ranking: groups by training member count.
Tensor popularity_scores(const InteractionDataset& ds);

}  // namespace ci4gi
