#pragma once

#include <string>
#include <vector>

namespace ci4gi {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Built-in verification suite: finite-difference gradients of every op and
/// of the full training objective, dense oracles for sparse products,
/// hypergraph propagation and attention, Wasserstein closed forms, InfoNCE
/// reductions and ranking metrics against enumeration.
std::vector<CheckResult> run_selfcheck(unsigned seed = 1);

}  // namespace ci4gi
