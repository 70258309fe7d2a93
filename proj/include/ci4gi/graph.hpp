#pragma once

#include <memory>
#include <vector>

#include "ci4gi/autodiff.hpp"
#include "ci4gi/tensor.hpp"

namespace ci4gi {

/// Normalized propagation matrix of the user-group hypergraph,
///   P = Dn^{-1/2} T De^{-1} T^T Dn^{-1/2},
/// over nodes ordered users first, then groups. Hyperedge k joins group node k
/// and every training member of group k. Zero degrees invert to zero.
struct HypergraphOperator {
  std::size_t n_users = 0;
  std::size_t n_groups = 0;
  std::shared_ptr<const SparseMatrix> propagation;
  std::vector<double> node_degree;  // hyperedge memberships per node
  std::vector<double> edge_degree;  // member count + 1 per group

  std::size_t n_nodes() const noexcept { return n_users + n_groups; }
};

// Node x hyperedge incidence matrix of the user-group hypergraph.
SparseMatrix hypergraph_incidence(const SparseMatrix& user_group);

HypergraphOperator build_hypergraph(const SparseMatrix& user_group);

/// Directed edge list over left nodes [0, n_left) followed by right nodes
/// [n_left, n_left + n_right). Holds both directions of every interaction and a
/// self-loop per node, sorted by destination.
struct BipartiteGraph {
  std::size_t n_left = 0;
  std::size_t n_right = 0;
  IndexArray src;
  IndexArray dst;
  std::vector<std::size_t> dst_offsets;  // in-edges of node v are [dst_offsets[v], dst_offsets[v+1])

  std::size_t n_nodes() const noexcept { return n_left + n_right; }
  std::size_t n_edges() const noexcept { return src ? src->size() : 0; }
};

BipartiteGraph build_bipartite(const SparseMatrix& interactions, std::size_t n_left, std::size_t n_right);

/// Row-normalized product D^{-1} Z Y mapping users to the average of items their
/// groups interacted with. Rows without context are empty.
SparseMatrix context_operator(const SparseMatrix& user_group, const SparseMatrix& group_item);

}  // namespace ci4gi
