#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ci4gi/autodiff.hpp"

namespace ci4gi {

struct GradCheckOptions {
  double step = 1e-6;
  double rel_tol = 1e-4;
  // Below this analytic magnitude the absolute error is checked instead.
  double small_threshold = 1e-4;
  double abs_tol = 1e-7;
};

struct GradCheckResult {
  bool passed = true;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t n_checked = 0;
  std::string worst;  // "input#i[j]: analytic vs numeric" of the worst entry
};

// Builds a scalar loss on the given tape from one leaf per input tensor.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of `build` against central differences
/// for every entry of every input.
GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace ci4gi
