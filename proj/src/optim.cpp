#include "ci4gi/optim.hpp"

#include <cmath>

#include "ci4gi/errors.hpp"

namespace ci4gi {

Adam::Adam(std::vector<Tensor*> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (options_.lr < 0) throw ConfigError("learning rate must be non-negative");
  for (const Tensor* p : params_) {
    m_.push_back(Tensor::zeros_like(*p));
    v_.push_back(Tensor::zeros_like(*p));
  }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) throw DimensionError("Adam::step: one gradient per parameter expected");
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    const Tensor* g = grads[k];
    if (g != nullptr && g->shape() != p.shape()) {
      throw DimensionError("Adam::step: gradient " + shape_string(g->shape()) + " for parameter " +
                           shape_string(p.shape()));
    }
    auto m = m_[k].data();
    auto v = v_[k].data();
    auto x = p.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      x[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

}  // namespace ci4gi
