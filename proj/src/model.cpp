#include "ci4gi/model.hpp"

#include <cmath>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

MlpParams init_mlp(std::size_t d, double bound, std::mt19937_64& rng) {
  MlpParams m;
  m.w1 = uniform({d, d}, bound, rng);
  m.b1 = Tensor(Shape{1, d});
  m.w2 = uniform({d, d}, bound, rng);
  m.b2 = Tensor(Shape{1, d});
  return m;
}

template <class Self, class Out>
void collect(Self& p, Out& out) {
  out.emplace_back("tables.user_group_level", &p.tables.user_group_level);
  out.emplace_back("tables.user_item_level", &p.tables.user_item_level);
  out.emplace_back("tables.group_group_level", &p.tables.group_group_level);
  out.emplace_back("tables.group_item_level", &p.tables.group_item_level);
  out.emplace_back("tables.items", &p.tables.items);
  for (std::size_t l = 0; l < p.hypergraph_weights.size(); ++l)
    out.emplace_back("hypergraph." + std::to_string(l) + ".weight", &p.hypergraph_weights[l]);
  for (std::size_t l = 0; l < p.group_item_gat.size(); ++l) {
    out.emplace_back("gat_group_item." + std::to_string(l) + ".weight", &p.group_item_gat[l].weight);
    out.emplace_back("gat_group_item." + std::to_string(l) + ".attention", &p.group_item_gat[l].attention);
  }
  for (std::size_t l = 0; l < p.user_item_gat.size(); ++l) {
    out.emplace_back("gat_user_item." + std::to_string(l) + ".weight", &p.user_item_gat[l].weight);
    out.emplace_back("gat_user_item." + std::to_string(l) + ".attention", &p.user_item_gat[l].attention);
  }
  out.emplace_back("context.projection", &p.context_projection);
  for (auto* mlp : {&p.sigma_mlp, &p.context_mlp}) {
    const std::string prefix = mlp == &p.sigma_mlp ? "sigma_mlp." : "context_mlp.";
    out.emplace_back(prefix + "w1", &mlp->w1);
    out.emplace_back(prefix + "b1", &mlp->b1);
    out.emplace_back(prefix + "w2", &mlp->w2);
    out.emplace_back(prefix + "b2", &mlp->b2);
  }
}

}  // namespace

ModelParams ModelParams::initialize(const ModelDims& dims, std::mt19937_64& rng) {
  if (dims.dim == 0) throw ConfigError("embedding size must be positive");
  if (dims.layers == 0) throw ConfigError("layer count must be positive");
  const std::size_t d = dims.dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  ModelParams p;
  p.dims = dims;
  p.tables.user_group_level = uniform({dims.n_users, d}, bound, rng);
  p.tables.user_item_level = uniform({dims.n_users, d}, bound, rng);
  p.tables.group_group_level = uniform({dims.n_groups, d}, bound, rng);
  p.tables.group_item_level = uniform({dims.n_groups, d}, bound, rng);
  p.tables.items = uniform({dims.n_items, d}, bound, rng);
  for (std::size_t l = 0; l < dims.layers; ++l) p.hypergraph_weights.push_back(uniform({d, d}, bound, rng));
  for (auto* stack : {&p.group_item_gat, &p.user_item_gat}) {
    for (std::size_t l = 0; l < dims.layers; ++l)
      stack->push_back({uniform({d, d}, bound, rng), uniform({2 * d, 1}, bound, rng)});
  }
  p.context_projection = uniform({d, d}, bound, rng);
  p.sigma_mlp = init_mlp(d, bound, rng);
  p.context_mlp = init_mlp(d, bound, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect(*this, out);
  return out;
}

BoundParams bind_vars(std::size_t layers, std::vector<Var> vars) {
  const std::size_t expected = 5 + 5 * layers + 1 + 8;
  if (vars.size() != expected) {
    throw DimensionError("bind_vars: expected " + std::to_string(expected) + " tensors, got " +
                         std::to_string(vars.size()));
  }
  BoundParams b;
  std::size_t k = 0;
  auto next = [&] { return vars[k++]; };
  b.user_group_level = next();
  b.user_item_level = next();
  b.group_group_level = next();
  b.group_item_level = next();
  b.items = next();
  for (std::size_t l = 0; l < layers; ++l) b.hypergraph_weights.push_back(next());
  for (std::size_t l = 0; l < layers; ++l) {
    Var w = next();
    b.group_item_gat.emplace_back(w, next());
  }
  for (std::size_t l = 0; l < layers; ++l) {
    Var w = next();
    b.user_item_gat.emplace_back(w, next());
  }
  b.context_projection = next();
  for (int i = 0; i < 4; ++i) b.sigma_mlp.push_back(next());
  for (int i = 0; i < 4; ++i) b.context_mlp.push_back(next());
  b.all = std::move(vars);
  return b;
}

BoundParams bind_params(Tape& tape, const ModelParams& params) {
  std::vector<Var> vars;
  for (const auto& [name, t] : params.named_tensors()) vars.push_back(tape.recording() ? tape.leaf(*t) : tape.constant(*t));
  return bind_vars(params.hypergraph_weights.size(), std::move(vars));
}

ModelGraphs ModelGraphs::build(const InteractionDataset& ds) {
  ModelGraphs g;
  g.hypergraph = build_hypergraph(ds.train);
  g.group_item = build_bipartite(ds.group_item, ds.n_groups, ds.n_items);
  g.user_item = build_bipartite(ds.user_item, ds.n_users, ds.n_items);
  g.context = std::make_shared<const SparseMatrix>(context_operator(ds.train, ds.group_item));
  g.context_mask = Tensor(Shape{ds.n_users, 1});
  for (std::size_t u = 0; u < ds.n_users; ++u) g.context_mask[u] = g.context->row_nnz(u) > 0 ? 1.0 : 0.0;
  return g;
}

// ---------------------------------------------------------------------------

std::pair<Var, Var> hyperconv_forward(const HypergraphOperator& hypergraph, Var users, Var groups,
                                      const std::vector<Var>& weights) {
  if (users.value().rows() != hypergraph.n_users || groups.value().rows() != hypergraph.n_groups) {
    throw DimensionError("hyperconv_forward: embedding rows do not match the hypergraph");
  }
  Var nodes = concat_rows({users, groups});
  for (const Var& w : weights) nodes = sigmoid(matmul(spmm(hypergraph.propagation, nodes), w));
  return {slice_rows(nodes, 0, hypergraph.n_users), slice_rows(nodes, hypergraph.n_users, hypergraph.n_nodes())};
}

Var gat_layer(const BipartiteGraph& graph, Var features, Var weight, Var attention) {
  if (features.value().rows() != graph.n_nodes()) {
    throw DimensionError("gat_layer: " + std::to_string(features.value().rows()) + " feature rows for " +
                         std::to_string(graph.n_nodes()) + " nodes");
  }
  const std::size_t d = weight.value().cols();
  if (attention.value().rows() != 2 * d) throw DimensionError("gat_layer: attention vector must have 2d entries");
  Var projected = matmul(features, weight);
  Var dst_score = matmul(projected, slice_rows(attention, 0, d));
  Var src_score = matmul(projected, slice_rows(attention, d, 2 * d));
  Var logits = leaky_relu(add(gather_rows(dst_score, graph.dst), gather_rows(src_score, graph.src)), 0.2);
  Var alpha = segment_softmax(logits, graph.dst, graph.n_nodes());
  Var messages = scale_rows(gather_rows(projected, graph.src), alpha);
  return segment_sum(messages, graph.dst, graph.n_nodes());
}

Var gat_stack(const BipartiteGraph& graph, Var features, const std::vector<std::pair<Var, Var>>& layers) {
  for (const auto& [w, a] : layers) features = gat_layer(graph, features, w, a);
  return features;
}

Var mlp_forward(Var x, const std::vector<Var>& layer) {
  Var hidden = leaky_relu(add_bias(matmul(x, layer.at(0)), layer.at(1)), 0.2);
  return add_bias(matmul(hidden, layer.at(2)), layer.at(3));
}

ForwardState forward(const ModelGraphs& graphs, const BoundParams& params, const ForwardOptions& options,
                     std::mt19937_64* rng) {
  if (options.gamma < 0) throw ConfigError("gamma must be non-negative");
  if (options.sample && rng == nullptr) throw UsageError("forward: sampling requires a random generator");
  Tape& tape = *params.items.tape();
  const std::size_t n_users = graphs.hypergraph.n_users;
  const std::size_t n_groups = graphs.hypergraph.n_groups;
  const std::size_t n_items = graphs.group_item.n_right;

  ForwardState s;
  std::tie(s.user_group_level, s.group_group_level) = hyperconv_forward(
      graphs.hypergraph, params.user_group_level, params.group_group_level, params.hypergraph_weights);

  Var gv = gat_stack(graphs.group_item, concat_rows({params.group_item_level, params.items}), params.group_item_gat);
  s.group_item_level = slice_rows(gv, 0, n_groups);
  s.items_from_groups = slice_rows(gv, n_groups, n_groups + n_items);

  Var user_item_input = options.item_enhancement ? s.items_from_groups : params.items;
  Var uv = gat_stack(graphs.user_item, concat_rows({params.user_item_level, user_item_input}), params.user_item_gat);
  s.user_item_mean = slice_rows(uv, 0, n_users);
  s.items_from_users = slice_rows(uv, n_users, n_users + n_items);

  if (options.context_enhancement) {
    Var context = matmul(spmm(graphs.context, s.items_from_groups), params.context_projection);
    Var increment = mlp_forward(sub(s.user_item_mean, context), params.context_mlp);
    s.context_increment = scale_rows(increment, tape.constant(graphs.context_mask));
    s.user_item_mean_ctx = add(s.user_item_mean, scale(s.context_increment, options.gamma));
  } else {
    s.context_increment = tape.constant(Tensor(s.user_item_mean.shape()));
    s.user_item_mean_ctx = s.user_item_mean;
  }

  s.user_item_std = add_scalar(softplus(mlp_forward(s.user_item_mean, params.sigma_mlp)), 1e-6);

  if (options.sample) {
    Tensor noise(s.user_item_std.shape());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : noise.data()) v = normal(*rng);
    s.user_item_level = add(s.user_item_mean_ctx, mul(s.user_item_std, tape.constant(std::move(noise))));
  } else {
    s.user_item_level = s.user_item_mean_ctx;
  }
  return s;
}

Var score_all(const ForwardState& state, const ScoreBranches& branches) {
  if (!branches.group_level && !branches.item_level) throw ConfigError("score_all: both branches disabled");
  Var total;
  if (branches.group_level) total = matmul(state.user_group_level, transpose(state.group_group_level));
  if (branches.item_level) {
    Var item = matmul(state.user_item_level, transpose(state.group_item_level));
    total = total.valid() ? add(total, item) : item;
  }
  return total;
}

Var score_pairs(const ForwardState& state, IndexArray users, IndexArray groups, const ScoreBranches& branches) {
  if (!branches.group_level && !branches.item_level) throw ConfigError("score_pairs: both branches disabled");
  if (users->size() != groups->size()) throw DimensionError("score_pairs: user and group index lengths differ");
  Var total;
  if (branches.group_level) {
    total = row_sum(mul(gather_rows(state.user_group_level, users), gather_rows(state.group_group_level, groups)));
  }
  if (branches.item_level) {
    Var item = row_sum(mul(gather_rows(state.user_item_level, users), gather_rows(state.group_item_level, groups)));
    total = total.valid() ? add(total, item) : item;
  }
  return total;
}

}  // namespace ci4gi
