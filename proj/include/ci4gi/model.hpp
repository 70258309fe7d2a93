#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ci4gi/autodiff.hpp"
#include "ci4gi/dataset.hpp"
#include "ci4gi/graph.hpp"

namespace ci4gi {

struct ModelDims {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_groups = 0;
  std::size_t dim = 256;
  std::size_t layers = 2;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Five learnable embedding tables: group-level and item-level interests for
/// users and groups, plus item embeddings.
struct EmbeddingTables {
  Tensor user_group_level;   // n_users x d
  Tensor user_item_level;    // n_users x d
  Tensor group_group_level;  // n_groups x d
  Tensor group_item_level;   // n_groups x d
  Tensor items;              // n_items x d
};

struct GatLayerParams {
  Tensor weight;     // d x d
  Tensor attention;  // 2d x 1; first half scores the destination, second the source
};

// Two-layer perceptron d -> d -> d with leaky-relu hidden activation.
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  ModelDims dims;
  EmbeddingTables tables;
  std::vector<Tensor> hypergraph_weights;  // one d x d per layer
  std::vector<GatLayerParams> group_item_gat;
  std::vector<GatLayerParams> user_item_gat;
  Tensor context_projection;  // d x d
  MlpParams sigma_mlp;
  MlpParams context_mlp;

  /// Uniform(-1/sqrt(d), 1/sqrt(d)) for embeddings and weight matrices, zero biases.
  static ModelParams initialize(const ModelDims& dims, std::mt19937_64& rng);

  // Stable order used by the optimizer, regularizer and checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

/// ModelParams recorded on a tape, in named_tensors() order.
struct BoundParams {
  Var user_group_level, user_item_level, group_group_level, group_item_level, items;
  std::vector<Var> hypergraph_weights;
  std::vector<std::pair<Var, Var>> group_item_gat;  // (weight, attention)
  std::vector<std::pair<Var, Var>> user_item_gat;
  Var context_projection;
  std::vector<Var> sigma_mlp;    // w1, b1, w2, b2
  std::vector<Var> context_mlp;  // w1, b1, w2, b2
  std::vector<Var> all;
};

// Leaves on a recording tape, constants otherwise.
BoundParams bind_params(Tape& tape, const ModelParams& params);
// Assigns already-recorded Vars given in named_tensors() order.
BoundParams bind_vars(std::size_t layers, std::vector<Var> vars);

/// Graph structure derived from the training data only.
struct ModelGraphs {
  HypergraphOperator hypergraph;
  BipartiteGraph group_item;
  BipartiteGraph user_item;
  std::shared_ptr<const SparseMatrix> context;  // users x items
  Tensor context_mask;                          // n_users x 1; 0 where a user has no context items

  static ModelGraphs build(const InteractionDataset& ds);
};

struct ForwardOptions {
  double gamma = 1.0;
  bool item_enhancement = true;
  bool context_enhancement = true;
  bool sample = true;  // draw the reparameterization noise; false uses the mean
};

struct ForwardState {
  Var user_group_level;      // U_s_hat
  Var group_group_level;     // G_s_hat
  Var items_from_groups;     // V_hat
  Var user_item_mean;        // U_v_mu
  Var items_from_users;      // V_hat'
  Var context_increment;     // delta U
  Var user_item_mean_ctx;    // U_v_mu^C
  Var user_item_std;         // U_v_sigma
  Var user_item_level;       // U_v_hat
  Var group_item_level;      // G_v_hat
};

// Returns (user rows, group rows) after `weights.size()` layers of
// N <- sigmoid(P N W).
std::pair<Var, Var> hyperconv_forward(const HypergraphOperator& hypergraph, Var users, Var groups,
                                      const std::vector<Var>& weights);

// Single-head attention layer over a graph with self-loops.
Var gat_layer(const BipartiteGraph& graph, Var features, Var weight, Var attention);
Var gat_stack(const BipartiteGraph& graph, Var features, const std::vector<std::pair<Var, Var>>& layers);

Var mlp_forward(Var x, const std::vector<Var>& layer);

/// Full forward pass. `rng` is required when options.sample is set.
ForwardState forward(const ModelGraphs& graphs, const BoundParams& params, const ForwardOptions& options,
                     std::mt19937_64* rng);

struct ScoreBranches {
  bool group_level = true;
  bool item_level = true;
};

/// s_ik = u_s[i].g_s[k] + u_v[i].g_v[k], i.e. the dot product of the
/// concatenated representations; disabled branches contribute zero.
Var score_all(const ForwardState& state, const ScoreBranches& branches = {});
Var score_pairs(const ForwardState& state, IndexArray users, IndexArray groups, const ScoreBranches& branches = {});

}  // namespace ci4gi
