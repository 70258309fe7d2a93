#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ci4gi/autodiff.hpp"

namespace ci4gi {

struct LossConfig {
  double tau = 1.0;        // InfoNCE temperature
  double mu_w2 = 1.5;      // Wasserstein threshold below which a batch user is a false negative
  double lambda1 = 1e-4;   // contrastive weight
  double lambda2 = 1e-4;   // L2 weight
  double k_anneal = 0.1;   // slope of the annealing schedule
  double e_anneal = 20.0;  // epoch at which both contrastive losses weigh the same

  void validate() const;
};

// Mean over triples of -ln sigmoid(s_pos - s_neg). Inputs are [B x 1].
Var bpr_loss(Var positive_scores, Var negative_scores);

/// Exact 2-Wasserstein distance between axis-aligned Gaussians:
/// sqrt(|mu1 - mu2|^2 + |sigma1 - sigma2|^2).
double w2_diag_gauss(std::span<const double> mean1, std::span<const double> std1, std::span<const double> mean2,
                     std::span<const double> std2);

/// Row-major B x B flags: negative(i, j) is true when batch user j is a
/// negative for anchor i. The anchor itself and duplicates of its id never are.
class NegativeMask {
 public:
  explicit NegativeMask(std::size_t batch) : batch_(batch), flags_(batch * batch, 0) {}

  std::size_t batch() const noexcept { return batch_; }
  bool negative(std::size_t i, std::size_t j) const { return flags_[i * batch_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool value) { flags_[i * batch_ + j] = value ? 1 : 0; }
  std::size_t count(std::size_t i) const;
  Tensor as_tensor() const;

 private:
  std::size_t batch_;
  std::vector<char> flags_;
};

// Every other user of the batch.
NegativeMask in_batch_negatives(std::span<const std::size_t> user_ids);

/// Keeps only batch users whose item-level Gaussian lies strictly farther than
/// `threshold` from the anchor's. means/stds are [B x d].
NegativeMask wasserstein_negatives(std::span<const std::size_t> user_ids, const Tensor& means, const Tensor& stds,
                                   double threshold);

/// Cross-level InfoNCE summed over anchors:
///   -sum_i log( e(v_i, s_i) / (e(v_i, s_i) + sum_{j in Neg_i} e(v_j, s_i) + sum_{j in Neg_i} e(v_i, s_j)) )
/// with e(a, b) = exp(cos(a, b) / tau). Anchors without negatives contribute 0.
Var infonce(Var item_level, Var group_level, const NegativeMask& mask, double tau);

Var infonce_vanilla(Var item_level, Var group_level, double tau, std::span<const std::size_t> user_ids = {});
Var infonce_filtered(Var item_level, Var group_level, const Tensor& means, const Tensor& stds, double tau,
                     double threshold, std::span<const std::size_t> user_ids = {});

// 1 / (1 + exp(-k (epoch - E)))
double anneal_beta(double epoch, double k, double e);

struct ContrastiveSchedule {
  std::optional<double> const_beta;   // overrides the annealed value
  bool swap_anneal_weights = false;   // beta weighs the filtered loss instead of the vanilla one
};

double contrastive_beta(const LossConfig& cfg, const ContrastiveSchedule& schedule, double epoch);

/// main + lambda1 (beta ssl1 + (1 - beta) ssl2) + lambda2 l2. An unbound
/// contrastive Var drops its term; the other keeps its weight.
Var total_loss(Var main, Var ssl1, Var ssl2, Var l2_norm_sq, const LossConfig& cfg, double epoch,
               const ContrastiveSchedule& schedule = {});

// Sum of squares over every tensor.
Var squared_norm(const std::vector<Var>& params);

}  // namespace ci4gi
