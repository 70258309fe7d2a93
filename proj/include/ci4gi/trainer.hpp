#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ci4gi/dataset.hpp"
#include "ci4gi/losses.hpp"
#include "ci4gi/metrics.hpp"
#include "ci4gi/model.hpp"

namespace ci4gi {

// Ablation variants A-I are combinations of these.
struct AblationFlags {
  bool no_group_level = false;
  bool no_item_level = false;
  bool no_item_enhancement = false;
  bool no_context_enhancement = false;
  bool no_ssl = false;
  bool no_ssl1 = false;
  bool no_ssl2 = false;
  std::optional<double> const_beta;
  bool swap_anneal_weights = false;

  // Both contrastive losses need both interest levels.
  bool uses_ssl1() const { return !(no_ssl || no_ssl1 || no_group_level || no_item_level); }
  bool uses_ssl2() const { return !(no_ssl || no_ssl2 || no_group_level || no_item_level); }

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TrainConfig {
  std::size_t dim = 256;
  std::size_t layers = 2;
  double lr = 0.005;
  std::size_t batch_size = 1024;
  std::size_t max_epochs = 500;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  LossConfig loss;
  double gamma = 1.0;
  std::vector<std::size_t> eval_ks = {10, 20};
  std::size_t select_k = 10;  // model selection on validation NDCG at this cutoff
  AblationFlags ablation;

  // Every violated constraint, one message each.
  std::vector<std::string> problems() const;
  void validate() const;  // ConfigError listing all problems

  ForwardOptions forward_options(bool sample) const;
  ScoreBranches branches() const;
  ContrastiveSchedule schedule() const;
};

struct BatchObjective {
  Var total, main, ssl1, ssl2, reg;  // ssl vars are unbound when disabled
  double beta = 0.0;
};

/// Records one batch's loss on the parameters' tape: forward with sampling, BPR over the
/// triples, both contrastive losses over the unique batch users, L2 over
/// every parameter, combined with the annealed weights.
BatchObjective batch_objective(const ModelGraphs& graphs, const BoundParams& params,
                               const TripletBatch& batch, const TrainConfig& cfg, std::size_t epoch,
                               std::mt19937_64& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0, main = 0.0, ssl1 = 0.0, ssl2 = 0.0, reg = 0.0;  // means over batches
  double beta = 0.0;
  std::size_t batches = 0;
  std::optional<MetricsReport> validation;
};

struct TrainResult {
  ModelParams params;  // best validation checkpoint, or final params without a validation split
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&, const ModelParams&)>;

// The parameters train() starts from for this dataset and seed.
ModelParams initial_params(const InteractionDataset& ds, const TrainConfig& cfg);

TrainResult train(const InteractionDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Inference forward pass (no sampling) and the full score matrix.
Tensor predict_scores(const ModelParams& params, const ModelGraphs& graphs, const TrainConfig& cfg);

MetricsReport evaluate(const ModelParams& params, const InteractionDataset& ds, Split split, const TrainConfig& cfg);

/// d(2|U| + 2|G| + |V|) + L d^2 + 2L(d^2 + 2d) + d^2 + 2(2d^2 + 2d):
/// five tables, hypergraph weights, two GAT stacks (weight + 2d attention),
/// the context projection and two d->d->d perceptrons with biases.
std::size_t count_parameters(const ModelDims& dims);
std::size_t count_tensor_entries(const ModelParams& params);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                       const TrainConfig& cfg);

}  // namespace ci4gi
