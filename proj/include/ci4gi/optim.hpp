#pragma once

#include <vector>

#include "ci4gi/tensor.hpp"

namespace ci4gi {

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over externally owned tensors.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamOptions options);

  // One bias-corrected update. A null gradient counts as zero.
  void step(const std::vector<const Tensor*>& grads);

  std::size_t steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  AdamOptions options_;
  std::size_t t_ = 0;
};

}  // namespace ci4gi
