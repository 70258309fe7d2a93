#include "ci4gi/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "ci4gi/gradcheck.hpp"
#include "ci4gi/graph.hpp"
#include "ci4gi/losses.hpp"
#include "ci4gi/metrics.hpp"
#include "ci4gi/trainer.hpp"

namespace ci4gi {

namespace {

using Rng = std::mt19937_64;
using Dense = std::vector<std::vector<double>>;

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor away_from_kink(Tensor t) {
  for (auto& v : t.data())
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  return t;
}

std::size_t small(Rng& rng) { return 1 + rng() % 4; }

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> op;
};

std::vector<OpCase> op_cases() {
  auto two = [](Rng& r) {
    Shape s{small(r), small(r)};
    return std::vector<Tensor>{rand_tensor(s, r), rand_tensor(s, r)};
  };
  auto one = [](Rng& r) { return std::vector<Tensor>{rand_tensor({small(r), small(r)}, r)}; };
  std::vector<OpCase> c;
  c.push_back({"add", two, [](Tape&, auto& v) { return add(v[0], v[1]); }});
  c.push_back({"sub", two, [](Tape&, auto& v) { return sub(v[0], v[1]); }});
  c.push_back({"mul", two, [](Tape&, auto& v) { return mul(v[0], v[1]); }});
  c.push_back({"div",
               [](Rng& r) {
                 Shape s{small(r), small(r)};
                 return std::vector<Tensor>{rand_tensor(s, r), rand_tensor(s, r, 0.5, 2.0)};
               },
               [](Tape&, auto& v) { return div(v[0], v[1]); }});
  c.push_back({"exp", one, [](Tape&, auto& v) { return exp(v[0]); }});
  c.push_back({"log", [](Rng& r) { return std::vector<Tensor>{rand_tensor({small(r), small(r)}, r, 0.3, 3.0)}; },
               [](Tape&, auto& v) { return log(v[0]); }});
  c.push_back({"sigmoid", one, [](Tape&, auto& v) { return sigmoid(v[0]); }});
  c.push_back({"leaky_relu", [](Rng& r) { return std::vector<Tensor>{away_from_kink(rand_tensor({small(r), small(r)}, r))}; },
               [](Tape&, auto& v) { return leaky_relu(v[0]); }});
  c.push_back({"softplus", one, [](Tape&, auto& v) { return softplus(v[0]); }});
  c.push_back({"scale", one, [](Tape&, auto& v) { return scale(v[0], -1.7); }});
  c.push_back({"add_scalar", one, [](Tape&, auto& v) { return add_scalar(v[0], 0.3); }});
  c.push_back({"matmul",
               [](Rng& r) {
                 const std::size_t a = small(r), b = small(r), d = small(r);
                 return std::vector<Tensor>{rand_tensor({a, b}, r), rand_tensor({b, d}, r)};
               },
               [](Tape&, auto& v) { return matmul(v[0], v[1]); }});
  c.push_back({"spmm",
               [](Rng& r) { return std::vector<Tensor>{rand_tensor({5, small(r)}, r)}; },
               [](Tape&, auto& v) {
                 static const auto s = std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(
                     4, 5, {{0, 0, 0.5}, {0, 3, -1.0}, {1, 1, 2.0}, {3, 4, 0.7}, {3, 0, 0.1}}));
                 return spmm(s, v[0]);
               }});
  c.push_back({"transpose", one, [](Tape&, auto& v) { return transpose(v[0]); }});
  c.push_back({"row_sum", one, [](Tape&, auto& v) { return row_sum(v[0]); }});
  c.push_back({"row_mean", one, [](Tape&, auto& v) { return row_mean(v[0]); }});
  c.push_back({"l2_normalize_rows",
               [](Rng& r) { return std::vector<Tensor>{rand_tensor({small(r), 1 + small(r)}, r, 0.2, 1.0)}; },
               [](Tape&, auto& v) { return l2_normalize_rows(v[0]); }});
  c.push_back({"segment_softmax", [](Rng& r) { return std::vector<Tensor>{rand_tensor({6, 1}, r, -2, 2)}; },
               [](Tape&, auto& v) { return segment_softmax(v[0], make_index({0, 1, 0, 2, 1, 0}), 3); }});
  c.push_back({"segment_sum", [](Rng& r) { return std::vector<Tensor>{rand_tensor({5, small(r)}, r)}; },
               [](Tape&, auto& v) { return segment_sum(v[0], make_index({1, 0, 1, 1, 2}), 3); }});
  c.push_back({"gather_rows", [](Rng& r) { return std::vector<Tensor>{rand_tensor({4, small(r)}, r)}; },
               [](Tape&, auto& v) { return gather_rows(v[0], make_index({3, 0, 3, 1})); }});
  c.push_back({"concat_rows",
               [](Rng& r) {
                 const std::size_t d = small(r);
                 return std::vector<Tensor>{rand_tensor({small(r), d}, r), rand_tensor({small(r), d}, r)};
               },
               [](Tape&, auto& v) { return concat_rows({v[0], v[1]}); }});
  c.push_back({"slice_rows", [](Rng& r) { return std::vector<Tensor>{rand_tensor({5, small(r)}, r)}; },
               [](Tape&, auto& v) { return slice_rows(v[0], 1, 4); }});
  c.push_back({"add_bias",
               [](Rng& r) {
                 const std::size_t d = small(r);
                 return std::vector<Tensor>{rand_tensor({small(r), d}, r), rand_tensor({1, d}, r)};
               },
               [](Tape&, auto& v) { return add_bias(v[0], v[1]); }});
  c.push_back({"scale_rows",
               [](Rng& r) {
                 const std::size_t n = small(r);
                 return std::vector<Tensor>{rand_tensor({n, small(r)}, r), rand_tensor({n, 1}, r)};
               },
               [](Tape&, auto& v) { return scale_rows(v[0], v[1]); }});
  c.push_back({"sum", one, [](Tape&, auto& v) { return sum(v[0]); }});
  c.push_back({"cosine",
               [](Rng& r) {
                 const std::size_t n = 1 + small(r);
                 return std::vector<Tensor>{rand_tensor({n}, r, 0.1, 1.0), rand_tensor({n}, r, -1.0, 1.0)};
               },
               [](Tape&, auto& v) { return cosine(v[0], v[1]); }});
  return c;
}

class Suite {
 public:
  std::vector<CheckResult> results;

  void run(const std::string& name, const std::function<std::string()>& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r{name, false, "", 0.0};
    try {
      r.detail = body();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
};

std::string fmt(const char* what, double got, double want) {
  std::ostringstream s;
  s.precision(12);
  s << what << ": got " << got << ", expected " << want;
  return s.str();
}

Dense dense_of(const SparseMatrix& m) {
  Dense d(m.rows(), std::vector<double>(m.cols(), 0.0));
  for (const auto& t : m.triplets()) d[t.row][t.col] += t.value;
  return d;
}

// The 5-user/6-item/4-group graph shared by the gradient checks.
InteractionDataset toy_dataset() {
  auto ones = [](std::size_t r, std::size_t c, std::vector<std::pair<std::size_t, std::size_t>> cells) {
    std::vector<Triplet> t;
    for (auto [i, j] : cells) t.push_back({i, j, 1.0});
    return SparseMatrix::from_triplets(r, c, std::move(t));
  };
  InteractionDataset ds;
  ds.n_users = 5;
  ds.n_items = 6;
  ds.n_groups = 4;
  ds.user_item = ones(5, 6, {{0, 0}, {0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {4, 0}});
  ds.group_item = ones(4, 6, {{0, 0}, {1, 2}, {1, 3}, {2, 4}, {3, 5}, {3, 1}});
  ds.train = ones(5, 4, {{0, 0}, {0, 1}, {1, 1}, {2, 2}, {3, 3}, {1, 3}});
  ds.validation = SparseMatrix::from_triplets(5, 4, {});
  ds.test = SparseMatrix::from_triplets(5, 4, {});
  ds.users = IdMap::identity(5);
  ds.items = IdMap::identity(6);
  ds.groups = IdMap::identity(4);
  return ds;
}

}  // namespace

std::vector<CheckResult> run_selfcheck(unsigned seed) {
  Suite suite;
  Rng rng(seed);

  for (const auto& c : op_cases()) {
    suite.run(std::string("gradient ") + c.name, [&]() -> std::string {
      for (int trial = 0; trial < 8; ++trial) {
        auto inputs = c.inputs(rng);
        auto weights_seed = rng();
        auto res = check_gradients(
            [&](Tape& t, const std::vector<Var>& v) {
              Var y = c.op(t, v);
              Rng wr(weights_seed);
              return sum(mul(y, t.constant(rand_tensor(y.shape(), wr))));
            },
            inputs);
        if (!res.passed) return "trial " + std::to_string(trial) + ": " + res.worst;
      }
      return {};
    });
  }

  suite.run("gradient end-to-end objective", [&]() -> std::string {
    auto ds = toy_dataset();
    auto graphs = ModelGraphs::build(ds);
    TrainConfig cfg;
    cfg.dim = 3;
    cfg.layers = 2;
    cfg.loss.lambda1 = 0.5;
    cfg.loss.lambda2 = 0.01;
    cfg.loss.mu_w2 = 0.05;
    Rng init(seed + 1);
    auto params = ModelParams::initialize({5, 6, 4, 3, 2}, init);
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : params.named_tensors()) inputs.push_back(*t);
    TripletBatch batch;
    batch.triples = {{0, 0, 2}, {1, 3, 0}, {2, 2, 1}, {3, 3, 1}, {0, 1, 3}};
    auto res = check_gradients(
        [&](Tape&, const std::vector<Var>& v) {
          Rng noise(7);
          return batch_objective(graphs, bind_vars(2, v), batch, cfg, 15, noise).total;
        },
        inputs);
    return res.passed ? std::string{} : res.worst;
  });

  suite.run("sparse product vs dense", [&]() -> std::string {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t r = 1 + rng() % 40, k = 1 + rng() % 40, c = 1 + rng() % 8;
      std::vector<Triplet> t;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < k; ++j)
          if (rng() % 5 == 0) t.push_back({i, j, std::uniform_real_distribution<double>(-1, 1)(rng)});
      auto s = SparseMatrix::from_triplets(r, k, t);
      Tensor b = rand_tensor({k, c}, rng);
      Tensor got = kernels::spmm(s, b);
      Dense d = dense_of(s);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double want = 0;
          for (std::size_t q = 0; q < k; ++q) want += d[i][q] * b.at(q, j);
          if (std::abs(got.at(i, j) - want) > 1e-12) return fmt("spmm entry", got.at(i, j), want);
        }
    }
    return {};
  });

  suite.run("hypergraph operator vs dense chain", [&]() -> std::string {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t nu = 1 + rng() % 40, ng = 1 + rng() % 24;
      std::vector<Triplet> t;
      for (std::size_t u = 0; u < nu; ++u)
        for (std::size_t g = 0; g < ng; ++g)
          if (rng() % 4 == 0) t.push_back({u, g, 1.0});
      auto z = SparseMatrix::from_triplets(nu, ng, t);
      auto hg = build_hypergraph(z);
      const std::size_t n = nu + ng;
      Dense inc(n, std::vector<double>(ng, 0.0));
      for (const auto& e : t) inc[e.row][e.col] = 1.0;
      for (std::size_t g = 0; g < ng; ++g) inc[nu + g][g] = 1.0;
      std::vector<double> dn(n, 0.0), de(ng, 0.0);
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t g = 0; g < ng; ++g) {
          dn[v] += inc[v][g];
          de[g] += inc[v][g];
        }
      Dense p = dense_of(*hg.propagation);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          double want = 0;
          for (std::size_t g = 0; g < ng; ++g) want += inc[a][g] * inc[b][g] / de[g];
          want *= (dn[a] > 0 ? 1 / std::sqrt(dn[a]) : 0) * (dn[b] > 0 ? 1 / std::sqrt(dn[b]) : 0);
          if (std::abs(p[a][b] - want) > 1e-12) return fmt("propagation entry", p[a][b], want);
        }
    }
    return {};
  });

  suite.run("attention layer vs dense oracle", [&]() -> std::string {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t nl = 1 + rng() % 5, nr = 1 + rng() % 5, d = 1 + rng() % 3, n = nl + nr;
      std::vector<Triplet> t;
      std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
      for (std::size_t i = 0; i < n; ++i) adj[i][i] = 1;
      for (std::size_t i = 0; i < nl; ++i)
        for (std::size_t j = 0; j < nr; ++j)
          if (rng() % 3 == 0) {
            t.push_back({i, j, 1.0});
            adj[i][nl + j] = adj[nl + j][i] = 1;
          }
      auto graph = build_bipartite(SparseMatrix::from_triplets(nl, nr, t), nl, nr);
      Tensor h = rand_tensor({n, d}, rng), w = rand_tensor({d, d}, rng), a = rand_tensor({2 * d, 1}, rng);
      Tape tape(false);
      Tensor got = gat_layer(graph, tape.constant(h), tape.constant(w), tape.constant(a)).value();
      Tensor wh = kernels::matmul(h, w);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> e(n, 0.0);
        double zmax = -INFINITY, z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!adj[i][j]) continue;
          double s = 0;
          for (std::size_t k = 0; k < d; ++k) s += a[k] * wh.at(i, k) + a[d + k] * wh.at(j, k);
          e[j] = s > 0 ? s : 0.2 * s;
          zmax = std::max(zmax, e[j]);
        }
        for (std::size_t j = 0; j < n; ++j)
          if (adj[i][j]) z += std::exp(e[j] - zmax);
        for (std::size_t k = 0; k < d; ++k) {
          double want = 0;
          for (std::size_t j = 0; j < n; ++j)
            if (adj[i][j]) want += std::exp(e[j] - zmax) / z * wh.at(j, k);
          if (std::abs(got.at(i, k) - want) > 1e-10) return fmt("attention output", got.at(i, k), want);
        }
      }
    }
    return {};
  });

  suite.run("wasserstein closed form", [&]() -> std::string {
    const double five = w2_diag_gauss(std::vector{0.0, 0.0}, std::vector{1.0, 1.0}, std::vector{3.0, 4.0},
                                      std::vector{1.0, 1.0});
    if (std::abs(five - 5.0) > 1e-12) return fmt("equal-variance case", five, 5.0);
    const double r27 = w2_diag_gauss(std::vector{0.0, 0.0}, std::vector{1.0, 1.0}, std::vector{3.0, 4.0},
                                     std::vector{2.0, 2.0});
    if (std::abs(r27 - std::sqrt(27.0)) > 1e-12) return fmt("unequal-variance case", r27, std::sqrt(27.0));
    const std::size_t n = 100000;
    std::normal_distribution<double> a(0.0, 1.0), b(1.0, 2.0);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = a(rng);
    for (auto& v : y) v = b(rng);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    const double mc = std::sqrt(acc / n), exact = std::sqrt(2.0);
    if (std::abs(mc - exact) / exact > 0.02) return fmt("sorted-sample coupling", mc, exact);
    return {};
  });

  suite.run("infonce reductions", [&]() -> std::string {
    Tape tape(false);
    Tensor same = Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}});
    const double two_ln3 = infonce_vanilla(tape.constant(same), tape.constant(same), 1.0).value().item();
    if (std::abs(two_ln3 - 2 * std::log(3.0)) > 1e-12) return fmt("identical pair", two_ln3, 2 * std::log(3.0));
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t b = 2 + rng() % 5, d = 1 + rng() % 4;
      Tensor v = rand_tensor({b, d}, rng), s = rand_tensor({b, d}, rng);
      Tensor mu = rand_tensor({b, d}, rng), sd = rand_tensor({b, d}, rng, 0.1, 1.0);
      const double vanilla = infonce_vanilla(tape.constant(v), tape.constant(s), 0.7).value().item();
      const double zero = infonce_filtered(tape.constant(v), tape.constant(s), mu, sd, 0.7, 0.0).value().item();
      const double inf = infonce_filtered(tape.constant(v), tape.constant(s), mu, sd, 0.7, INFINITY).value().item();
      if (std::abs(zero - vanilla) > 1e-12) return fmt("threshold 0", zero, vanilla);
      if (inf != 0.0) return fmt("infinite threshold", inf, 0.0);
    }
    const double bpr0 = bpr_loss(tape.constant(Tensor::matrix({{0.4}})), tape.constant(Tensor::matrix({{0.4}})))
                            .value()
                            .item();
    if (std::abs(bpr0 - std::log(2.0)) > 1e-12) return fmt("bpr at zero margin", bpr0, std::log(2.0));
    if (anneal_beta(20, 0.1, 20) != 0.5) return "annealing midpoint differs from 0.5";
    return {};
  });

  suite.run("ranking metrics vs enumeration", [&]() -> std::string {
    auto gain = [](std::size_t p) { return 1.0 / std::log2(static_cast<double>(p) + 2.0); };
    for (std::size_t n = 1; n <= 6; ++n) {
      std::vector<char> rel(n, 0);
      for (auto& r : rel) r = static_cast<char>(rng() % 2);
      rel[rng() % n] = 1;
      std::vector<std::size_t> relevant;
      for (std::size_t g = 0; g < n; ++g)
        if (rel[g]) relevant.push_back(g);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t k = 1; k <= n; ++k) {
        double ideal = 0;
        std::vector<std::size_t> p = perm;
        do {
          double dcg = 0;
          for (std::size_t i = 0; i < k; ++i)
            if (rel[p[i]]) dcg += gain(i);
          ideal = std::max(ideal, dcg);
        } while (std::next_permutation(p.begin(), p.end()));
        p = perm;
        do {
          double dcg = 0;
          std::size_t hits = 0;
          for (std::size_t i = 0; i < k; ++i)
            if (rel[p[i]]) {
              dcg += gain(i);
              ++hits;
            }
          auto m = ranking_metrics(p, relevant, k);
          if (m.recall != static_cast<double>(hits) / relevant.size()) return fmt("recall", m.recall, hits);
          if (m.ndcg != dcg / ideal) return fmt("ndcg", m.ndcg, dcg / ideal);
        } while (std::next_permutation(p.begin(), p.end()));
      }
    }
    return {};
  });

  return suite.results;
}

}  // namespace ci4gi
