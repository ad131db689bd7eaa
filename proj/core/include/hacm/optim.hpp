// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hacm/graph.hpp"

namespace hacm::optim {

/// Linear warmup from 0 to `peak`, then cosine decay to `final_lr` at
/// `total_steps`. Steps past the end stay at `final_lr`.
struct Schedule {
  double peak = 1e-3;
  double final_lr = 5e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  double at(std::size_t step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;  // applied only to parameters flagged `decay`
};

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

  /// One update from each parameter's `grad`. Throws NumericError naming the
  /// first parameter whose gradient is not finite; nothing is updated then.
  void step(double lr);

  std::size_t steps() const noexcept { return t_; }
  std::span<Parameter* const> params() const noexcept { return params_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// sqrt of the summed squared gradients.
double grad_norm(std::span<Parameter* const> params);
void zero_grad(std::span<Parameter* const> params);

}  // namespace hacm::optim
