// SPDX-License-Identifier: Apache-2.0
#include "hacm/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hacm/error.hpp"

namespace hacm::optim {

double Schedule::at(std::size_t step) const {
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return final_lr + 0.5 * (peak - final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  for (Parameter* p : params_) {
    if (p->grad.size() != p->value.size()) {
      throw GraphError("adamw: parameter '" + p->name + "' has no gradient buffer");
    }
    if (!p->grad.all_finite()) throw NumericError("adamw: non-finite gradient in '" + p->name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      w[j] -= decay * w[j] + lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace hacm::optim
