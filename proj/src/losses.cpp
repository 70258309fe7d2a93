#include "ci4gi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ci4gi/errors.hpp"

namespace ci4gi {

void LossConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("loss.tau must be positive");
  if (mu_w2 < 0) throw ConfigError("loss.mu_w2 must be non-negative");
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("loss weights must be non-negative");
}

Var bpr_loss(Var positive_scores, Var negative_scores) {
  const std::size_t b = positive_scores.value().size();
  if (b == 0) throw UsageError("bpr_loss: empty batch");
  if (negative_scores.value().size() != b) throw DimensionError("bpr_loss: score vectors differ in length");
  // -ln sigmoid(x) = softplus(-x)
  Var per_triple = softplus(sub(negative_scores, positive_scores));
  return scale(sum(per_triple), 1.0 / static_cast<double>(b));
}

double w2_diag_gauss(std::span<const double> mean1, std::span<const double> std1, std::span<const double> mean2,
                     std::span<const double> std2) {
  const std::size_t d = mean1.size();
  if (std1.size() != d || mean2.size() != d || std2.size() != d) {
    throw DimensionError("w2_diag_gauss: parameter lengths differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (!(std1[i] > 0) || !(std2[i] > 0)) throw NumericDomainError("w2_diag_gauss: non-positive standard deviation");
    const double dm = mean1[i] - mean2[i];
    const double ds = std1[i] - std2[i];
    total += dm * dm + ds * ds;
  }
  return std::sqrt(total);
}

std::size_t NegativeMask::count(std::size_t i) const {
  return static_cast<std::size_t>(std::count(flags_.begin() + static_cast<std::ptrdiff_t>(i * batch_),
                                             flags_.begin() + static_cast<std::ptrdiff_t>((i + 1) * batch_), 1));
}

Tensor NegativeMask::as_tensor() const {
  Tensor t(Shape{batch_, batch_});
  for (std::size_t k = 0; k < flags_.size(); ++k) t[k] = flags_[k] ? 1.0 : 0.0;
  return t;
}

NegativeMask in_batch_negatives(std::span<const std::size_t> user_ids) {
  NegativeMask m(user_ids.size());
  for (std::size_t i = 0; i < user_ids.size(); ++i)
    for (std::size_t j = 0; j < user_ids.size(); ++j) m.set(i, j, user_ids[i] != user_ids[j]);
  return m;
}

NegativeMask wasserstein_negatives(std::span<const std::size_t> user_ids, const Tensor& means, const Tensor& stds,
                                   double threshold) {
  const std::size_t b = user_ids.size();
  if (means.rows() != b || stds.rows() != b || means.shape() != stds.shape()) {
    throw DimensionError("wasserstein_negatives: Gaussian parameters must be [B x d]");
  }
  NegativeMask m(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      if (user_ids[i] == user_ids[j]) continue;
      const bool keep = w2_diag_gauss(means.row(i), stds.row(i), means.row(j), stds.row(j)) > threshold;
      m.set(i, j, keep);
      m.set(j, i, keep);
    }
  }
  return m;
}

namespace {

std::vector<std::size_t> default_ids(std::span<const std::size_t> ids, std::size_t b) {
  if (!ids.empty()) {
    if (ids.size() != b) throw DimensionError("infonce: user id count differs from batch size");
    return {ids.begin(), ids.end()};
  }
  std::vector<std::size_t> out(b);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace

Var infonce(Var item_level, Var group_level, const NegativeMask& mask, double tau) {
  if (!(tau > 0)) throw ConfigError("infonce: temperature must be positive");
  const Tensor& v = item_level.value();
  if (v.shape() != group_level.value().shape() || v.rank() != 2) {
    throw DimensionError("infonce: both levels must be [B x d] of equal shape");
  }
  const std::size_t b = v.rows();
  if (b == 0) throw UsageError("infonce: empty batch");
  if (mask.batch() != b) throw DimensionError("infonce: mask size differs from batch size");
  Tape& tape = *item_level.tape();

  // sim[i][j] = cos(v_i, s_j); exponentials shifted by the maximum 1/tau
  Var sim = matmul(l2_normalize_rows(item_level), transpose(l2_normalize_rows(group_level)));
  Var shifted = scale(add_scalar(sim, -1.0), 1.0 / tau);
  Var e = exp(shifted);

  Tensor eye(Shape{b, b});
  Tensor active(Shape{b, 1});
  for (std::size_t i = 0; i < b; ++i) {
    eye.at(i, i) = 1.0;
    active[i] = mask.count(i) > 0 ? 1.0 : 0.0;
  }
  Var m = tape.constant(mask.as_tensor());
  Var identity = tape.constant(std::move(eye));

  Var positive = row_sum(mul(e, identity));
  Var neg_item_side = row_sum(mul(transpose(e), m));  // sum_j e(v_j, s_i)
  Var neg_group_side = row_sum(mul(e, m));            // sum_j e(v_i, s_j)
  Var denominator = add(add(positive, neg_item_side), neg_group_side);
  Var per_anchor = sub(log(denominator), row_sum(mul(shifted, identity)));
  return sum(scale_rows(per_anchor, tape.constant(std::move(active))));
}

Var infonce_vanilla(Var item_level, Var group_level, double tau, std::span<const std::size_t> user_ids) {
  const auto ids = default_ids(user_ids, item_level.value().rows());
  return infonce(item_level, group_level, in_batch_negatives(ids), tau);
}

Var infonce_filtered(Var item_level, Var group_level, const Tensor& means, const Tensor& stds, double tau,
                     double threshold, std::span<const std::size_t> user_ids) {
  const auto ids = default_ids(user_ids, item_level.value().rows());
  return infonce(item_level, group_level, wasserstein_negatives(ids, means, stds, threshold), tau);
}

double anneal_beta(double epoch, double k, double e) { return 1.0 / (1.0 + std::exp(-k * (epoch - e))); }

double contrastive_beta(const LossConfig& cfg, const ContrastiveSchedule& schedule, double epoch) {
  const double beta = schedule.const_beta ? *schedule.const_beta : anneal_beta(epoch, cfg.k_anneal, cfg.e_anneal);
  return schedule.swap_anneal_weights ? 1.0 - beta : beta;
}

Var total_loss(Var main, Var ssl1, Var ssl2, Var l2_norm_sq, const LossConfig& cfg, double epoch,
               const ContrastiveSchedule& schedule) {
  const double beta = contrastive_beta(cfg, schedule, epoch);
  Var total = main;
  if (ssl1.valid()) total = add(total, scale(ssl1, cfg.lambda1 * beta));
  if (ssl2.valid()) total = add(total, scale(ssl2, cfg.lambda1 * (1.0 - beta)));
  if (l2_norm_sq.valid()) total = add(total, scale(l2_norm_sq, cfg.lambda2));
  return total;
}

Var squared_norm(const std::vector<Var>& params) {
  if (params.empty()) throw UsageError("squared_norm: no tensors");
  Var total = sum(mul(params.front(), params.front()));
  for (std::size_t k = 1; k < params.size(); ++k) total = add(total, sum(mul(params[k], params[k])));
  return total;
}

}  // namespace ci4gi
