#include "ci4gi/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  return build(tape, leaves).value().item();
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    for (const Var& v : leaves) analytic.push_back(*tape.grad(v));
  }

  GradCheckResult result;
  double worst_score = -1.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + options.step;
      const double up = evaluate(build, probe);
      probe[k][i] = orig - options.step;
      const double down = evaluate(build, probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      ++result.n_checked;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      bool ok;
      double score;
      if (std::abs(a) < options.small_threshold) {
        ok = abs_err < options.abs_tol;
        score = abs_err / options.abs_tol;
      } else {
        const double rel = abs_err / std::abs(a);
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ok = rel < options.rel_tol;
        score = rel / options.rel_tol;
      }
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ok = false;
        score = INFINITY;
      }
      if (!ok) result.passed = false;
      if (score > worst_score) {
        worst_score = score;
        std::ostringstream os;
        os.precision(10);
        os << "input#" << k << "[" << i << "]: analytic " << a << " vs numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace ci4gi
