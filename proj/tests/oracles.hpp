#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ci4gi/tensor.hpp"

// Dense, loop-based references for the sparse and attention kernels.
namespace ci4gi::oracles {

using Dense = std::vector<std::vector<double>>;

inline Dense zeros(std::size_t r, std::size_t c) { return Dense(r, std::vector<double>(c, 0.0)); }

inline Dense product(const Dense& a, const Dense& b) {
  Dense c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Dense transposed(const Dense& a) {
  Dense t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// Dense chain Dn^{-1/2} T De^{-1} T^T Dn^{-1/2}, built from explicit matrices.
inline Dense dense_hypergraph_oracle(const Dense& z) {
  const std::size_t nu = z.size(), ng = z[0].size(), n = nu + ng;
  Dense t = zeros(n, ng);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t g = 0; g < ng; ++g) t[u][g] = z[u][g];
  for (std::size_t g = 0; g < ng; ++g) t[nu + g][g] = 1.0;
  Dense dn = zeros(n, n), de = zeros(ng, ng);
  for (std::size_t v = 0; v < n; ++v) {
    double d = 0;
    for (std::size_t g = 0; g < ng; ++g) d += t[v][g];
    dn[v][v] = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  for (std::size_t g = 0; g < ng; ++g) {
    double d = 0;
    for (std::size_t v = 0; v < n; ++v) d += t[v][g];
    de[g][g] = d > 0 ? 1.0 / d : 0.0;
  }
  return product(product(product(product(dn, t), de), transposed(t)), dn);
}

inline SparseMatrix from_dense(const Dense& z) {
  std::vector<Triplet> trip;
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < z[0].size(); ++j)
      if (z[i][j] != 0) trip.push_back({i, j, z[i][j]});
  return SparseMatrix::from_triplets(z.size(), z[0].size(), std::move(trip));
}

inline Dense random_membership(std::size_t nu, std::size_t ng, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  Dense z = zeros(nu, ng);
  for (auto& row : z)
    for (auto& v : row) v = b(rng) ? 1.0 : 0.0;
  return z;
}

inline double lrelu(double x) { return x > 0 ? x : 0.2 * x; }

// Attention over explicit adjacency with self-loops, all pairs enumerated.
inline Tensor dense_gat_oracle(const std::vector<std::vector<bool>>& adj, const Tensor& h, const Tensor& w, const Tensor& a) {
  const std::size_t n = h.rows(), d = w.cols();
  Tensor wh(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < h.cols(); ++k) wh.at(i, j) += h.at(i, k) * w.at(k, j);
  Tensor out(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logit(n, 0.0);
    double zmax = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(adj[i][j] || i == j)) continue;
      double e = 0;
      for (std::size_t k = 0; k < d; ++k) e += a[k] * wh.at(i, k) + a[d + k] * wh.at(j, k);
      logit[j] = lrelu(e);
      zmax = std::max(zmax, logit[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (adj[i][j] || i == j) z += std::exp(logit[j] - zmax);
    for (std::size_t j = 0; j < n; ++j) {
      if (!(adj[i][j] || i == j)) continue;
      const double alpha = std::exp(logit[j] - zmax) / z;
      for (std::size_t k = 0; k < d; ++k) out.at(i, k) += alpha * wh.at(j, k);
    }
  }
  return out;
}

}  // namespace ci4gi::oracles
