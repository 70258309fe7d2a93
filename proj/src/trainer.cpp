#include "ci4gi/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>

#include "ci4gi/errors.hpp"
#include "ci4gi/optim.hpp"

namespace ci4gi {

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (dim == 0) out.emplace_back("model.dim must be positive");
  if (layers == 0) out.emplace_back("model.layers must be positive");
  if (!(lr >= 0) || !std::isfinite(lr)) out.emplace_back("train.lr must be a non-negative number");
  if (batch_size == 0) out.emplace_back("train.batch_size must be positive");
  if (max_epochs == 0) out.emplace_back("train.max_epochs must be positive");
  if (patience == 0) out.emplace_back("train.patience must be positive");
  if (!(gamma >= 0)) out.emplace_back("model.gamma must be non-negative");
  if (!(loss.tau > 0)) out.emplace_back("loss.tau must be positive");
  if (!(loss.mu_w2 >= 0)) out.emplace_back("loss.mu_w2 must be non-negative");
  if (!(loss.lambda1 >= 0)) out.emplace_back("loss.lambda1 must be non-negative");
  if (!(loss.lambda2 >= 0)) out.emplace_back("loss.lambda2 must be non-negative");
  if (eval_ks.empty()) out.emplace_back("train.eval_ks must not be empty");
  if (std::find(eval_ks.begin(), eval_ks.end(), 0) != eval_ks.end()) out.emplace_back("train.eval_ks entries must be positive");
  if (std::find(eval_ks.begin(), eval_ks.end(), select_k) == eval_ks.end())
    out.emplace_back("train.select_k must be one of train.eval_ks");
  if (ablation.no_group_level && ablation.no_item_level)
    out.emplace_back("ablation.no_group_level and ablation.no_item_level cannot both be set");
  if (ablation.const_beta && !(*ablation.const_beta >= 0 && *ablation.const_beta <= 1))
    out.emplace_back("ablation.const_beta must lie in [0, 1]");
  return out;
}

void TrainConfig::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

ForwardOptions TrainConfig::forward_options(bool sample) const {
  return {.gamma = gamma,
          .item_enhancement = !ablation.no_item_enhancement,
          .context_enhancement = !ablation.no_context_enhancement,
          .sample = sample};
}

ScoreBranches TrainConfig::branches() const { return {!ablation.no_group_level, !ablation.no_item_level}; }

ContrastiveSchedule TrainConfig::schedule() const {
  return {.const_beta = ablation.const_beta, .swap_anneal_weights = ablation.swap_anneal_weights};
}

BatchObjective batch_objective(const ModelGraphs& graphs, const BoundParams& params,
                               const TripletBatch& batch, const TrainConfig& cfg, std::size_t epoch,
                               std::mt19937_64& rng) {
  const auto& triples = batch.triples;
  std::vector<std::size_t> users, pos, neg;
  users.reserve(triples.size());
  for (const auto& t : triples) {
    users.push_back(t.user);
    pos.push_back(t.positive);
    neg.push_back(t.negative);
  }
  auto state = forward(graphs, params, cfg.forward_options(true), &rng);
  auto user_idx = make_index(users);
  BatchObjective out;
  out.main = bpr_loss(score_pairs(state, user_idx, make_index(pos), cfg.branches()),
                      score_pairs(state, user_idx, make_index(neg), cfg.branches()));

  const bool ssl1 = cfg.ablation.uses_ssl1(), ssl2 = cfg.ablation.uses_ssl2();
  if (ssl1 || ssl2) {
    std::vector<std::size_t> unique = users;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    auto idx = make_index(unique);
    Var item_level = gather_rows(state.user_item_level, idx);
    Var group_level = gather_rows(state.user_group_level, idx);
    if (ssl1) out.ssl1 = infonce_vanilla(item_level, group_level, cfg.loss.tau, unique);
    if (ssl2) {
      Tensor means(Shape{unique.size(), cfg.dim}), stds(Shape{unique.size(), cfg.dim});
      const Tensor& mu = state.user_item_mean_ctx.value();
      const Tensor& sd = state.user_item_std.value();
      for (std::size_t r = 0; r < unique.size(); ++r) {
        std::copy_n(mu.row(unique[r]).begin(), cfg.dim, means.row(r).begin());
        std::copy_n(sd.row(unique[r]).begin(), cfg.dim, stds.row(r).begin());
      }
      out.ssl2 = infonce_filtered(item_level, group_level, means, stds, cfg.loss.tau, cfg.loss.mu_w2, unique);
    }
  }
  out.reg = squared_norm(params.all);
  out.beta = contrastive_beta(cfg.loss, cfg.schedule(), static_cast<double>(epoch));
  out.total = total_loss(out.main, out.ssl1, out.ssl2, out.reg, cfg.loss, static_cast<double>(epoch), cfg.schedule());
  return out;
}

Tensor predict_scores(const ModelParams& params, const ModelGraphs& graphs, const TrainConfig& cfg) {
  Tape tape(false);
  auto bound = bind_params(tape, params);
  auto state = forward(graphs, bound, cfg.forward_options(false), nullptr);
  return score_all(state, cfg.branches()).value();
}

MetricsReport evaluate(const ModelParams& params, const InteractionDataset& ds, Split split, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  auto graphs = ModelGraphs::build(ds);
  auto report = evaluate_scores(predict_scores(params, graphs, cfg), ds, split, cfg.eval_ks);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

// Independent streams for initialization, triplet sampling and reparameterization noise.
std::array<std::uint64_t, 3> stream_seeds(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xC14u};
  std::array<std::uint32_t, 6> words{};
  seq.generate(words.begin(), words.end());
  std::array<std::uint64_t, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1];
  return out;
}

}  // namespace

ModelParams initial_params(const InteractionDataset& ds, const TrainConfig& cfg) {
  std::mt19937_64 init_rng(stream_seeds(cfg.seed)[0]);
  return ModelParams::initialize({ds.n_users, ds.n_items, ds.n_groups, cfg.dim, cfg.layers}, init_rng);
}

TrainResult train(const InteractionDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  ds.validate();
  if (ds.train.nnz() == 0) throw InvalidDatasetError("training split is empty");

  const auto seeds = stream_seeds(cfg.seed);
  std::mt19937_64 sample_rng(seeds[1]), noise_rng(seeds[2]);
  ModelParams params = initial_params(ds, cfg);
  auto graphs = ModelGraphs::build(ds);
  TripletSampler sampler(ds);

  std::vector<Tensor*> tensors;
  for (auto& [name, t] : params.named_tensors()) tensors.push_back(t);
  Adam adam(tensors, {.lr = cfg.lr});

  const bool select = ds.validation.nnz() > 0;
  if (!select) spdlog::warn("no validation memberships: model selection and early stopping are disabled");
  const std::size_t n_batches = (ds.train.nnz() + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result;
  result.best_score = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t size = std::min(cfg.batch_size, ds.train.nnz() - b * cfg.batch_size);
      auto batch = sampler.sample(size, sample_rng);
      if (batch.triples.empty()) continue;
      Tape tape;
      auto bound = bind_params(tape, params);
      auto obj = batch_objective(graphs, bound, batch, cfg, epoch, noise_rng);
      const double loss = obj.total.value().item();
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(b));
      }
      tape.backward(obj.total);
      std::vector<const Tensor*> grads;
      for (const Var& v : bound.all) grads.push_back(tape.grad(v));
      adam.step(grads);

      rec.loss += loss;
      rec.main += obj.main.value().item();
      if (obj.ssl1.valid()) rec.ssl1 += obj.ssl1.value().item();
      if (obj.ssl2.valid()) rec.ssl2 += obj.ssl2.value().item();
      rec.reg += obj.reg.value().item();
      rec.beta = obj.beta;
      ++rec.batches;
    }
    if (rec.batches > 0) {
      const double n = static_cast<double>(rec.batches);
      rec.loss /= n;
      rec.main /= n;
      rec.ssl1 /= n;
      rec.ssl2 /= n;
      rec.reg /= n;
    }

    if (select) {
      auto report = evaluate_scores(predict_scores(params, graphs, cfg), ds, Split::Validation, cfg.eval_ks);
      report.epoch = epoch;
      const double score = report.ndcg_at(cfg.select_k);
      rec.validation = std::move(report);
      if (score > result.best_score) {
        result.best_score = score;
        result.best_epoch = epoch;
        result.params = params;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    spdlog::debug("epoch {} loss {:.6f} beta {:.4f}", epoch, rec.loss, rec.beta);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
    if (select && since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!select) {
    result.params = std::move(params);
    result.best_epoch = result.history.empty() ? 0 : result.history.back().epoch;
    result.best_score = 0.0;
  }
  return result;
}

std::size_t count_parameters(const ModelDims& m) {
  const std::size_t d = m.dim, l = m.layers;
  return d * (2 * m.n_users + 2 * m.n_groups + m.n_items) + l * d * d + 2 * l * (d * d + 2 * d) + d * d +
         2 * (2 * d * d + 2 * d);
}

std::size_t count_tensor_entries(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params.named_tensors()) n += t->size();
  return n;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                       const TrainConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const bool ssl1 = cfg.ablation.uses_ssl1(), ssl2 = cfg.ablation.uses_ssl2();
  out << "epoch,loss,main";
  if (ssl1) out << ",ssl1";
  if (ssl2) out << ",ssl2";
  out << ",reg,beta";
  for (auto k : cfg.eval_ks) out << ",val_recall@" << k << ",val_ndcg@" << k;
  out << '\n';
  out.precision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss << ',' << r.main;
    if (ssl1) out << ',' << r.ssl1;
    if (ssl2) out << ',' << r.ssl2;
    out << ',' << r.reg << ',' << r.beta;
    for (std::size_t i = 0; i < cfg.eval_ks.size(); ++i) {
      if (r.validation) {
        out << ',' << r.validation->recall[i] << ',' << r.validation->ndcg[i];
      } else {
        out << ",,";
      }
    }
    out << '\n';
  }
}

}  // namespace ci4gi
