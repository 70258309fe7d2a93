#include "ci4gi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ci4gi/errors.hpp"

namespace ci4gi {

SparseMatrix hypergraph_incidence(const SparseMatrix& user_group) {
  const std::size_t nu = user_group.rows(), ng = user_group.cols();
  std::vector<Triplet> trip;
  trip.reserve(user_group.nnz() + ng);
  for (std::size_t u = 0; u < nu; ++u)
    for (auto g : user_group.row_indices(u)) trip.push_back({u, g, 1.0});
  for (std::size_t g = 0; g < ng; ++g) trip.push_back({nu + g, g, 1.0});
  return SparseMatrix::from_triplets(nu + ng, ng, std::move(trip));
}

HypergraphOperator build_hypergraph(const SparseMatrix& user_group) {
  HypergraphOperator op;
  op.n_users = user_group.rows();
  op.n_groups = user_group.cols();
  const SparseMatrix incidence = hypergraph_incidence(user_group);
  const SparseMatrix members = incidence.transpose();  // hyperedge -> nodes

  op.node_degree.resize(op.n_nodes());
  for (std::size_t v = 0; v < op.n_nodes(); ++v) op.node_degree[v] = static_cast<double>(incidence.row_nnz(v));
  op.edge_degree.resize(op.n_groups);
  for (std::size_t e = 0; e < op.n_groups; ++e) op.edge_degree[e] = static_cast<double>(members.row_nnz(e));

  auto inv_sqrt = [](double d) { return d > 0 ? 1.0 / std::sqrt(d) : 0.0; };
  std::vector<Triplet> trip;
  for (std::size_t e = 0; e < op.n_groups; ++e) {
    auto nodes = members.row_indices(e);
    const double w = op.edge_degree[e] > 0 ? 1.0 / op.edge_degree[e] : 0.0;
    for (auto a : nodes)
      for (auto b : nodes)
        trip.push_back({a, b, w * inv_sqrt(op.node_degree[a]) * inv_sqrt(op.node_degree[b])});
  }
  op.propagation = std::make_shared<const SparseMatrix>(
      SparseMatrix::from_triplets(op.n_nodes(), op.n_nodes(), std::move(trip)));
  return op;
}

BipartiteGraph build_bipartite(const SparseMatrix& interactions, std::size_t n_left, std::size_t n_right) {
  if (interactions.rows() != n_left || interactions.cols() != n_right) {
    throw DimensionError("build_bipartite: interaction matrix is [" + std::to_string(interactions.rows()) + "x" +
                         std::to_string(interactions.cols()) + "], expected [" + std::to_string(n_left) + "x" +
                         std::to_string(n_right) + "]");
  }
  const std::size_t n = n_left + n_right;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (dst, src)
  edges.reserve(2 * interactions.nnz() + n);
  for (std::size_t l = 0; l < n_left; ++l) {
    for (auto r : interactions.row_indices(l)) {
      edges.emplace_back(n_left + r, l);
      edges.emplace_back(l, n_left + r);
    }
  }
  for (std::size_t v = 0; v < n; ++v) edges.emplace_back(v, v);
  std::sort(edges.begin(), edges.end());

  BipartiteGraph g;
  g.n_left = n_left;
  g.n_right = n_right;
  std::vector<std::size_t> src(edges.size()), dst(edges.size());
  g.dst_offsets.assign(n + 1, 0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    dst[e] = edges[e].first;
    src[e] = edges[e].second;
    ++g.dst_offsets[dst[e] + 1];
  }
  std::partial_sum(g.dst_offsets.begin(), g.dst_offsets.end(), g.dst_offsets.begin());
  g.src = make_index(std::move(src));
  g.dst = make_index(std::move(dst));
  return g;
}

SparseMatrix context_operator(const SparseMatrix& user_group, const SparseMatrix& group_item) {
  SparseMatrix zy = user_group.multiply(group_item);
  std::vector<double> vals(zy.values().begin(), zy.values().end());
  for (std::size_t u = 0; u < zy.rows(); ++u) {
    double total = 0.0;
    for (auto v : zy.row_values(u)) total += v;
    for (std::size_t p = zy.row_offsets()[u]; p < zy.row_offsets()[u + 1]; ++p) vals[p] /= total;
  }
  return SparseMatrix(zy.rows(), zy.cols(), {zy.row_offsets().begin(), zy.row_offsets().end()},
                      {zy.col_indices().begin(), zy.col_indices().end()}, std::move(vals));
}

}  // namespace ci4gi
