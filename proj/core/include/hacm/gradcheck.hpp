// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>

#include "hacm/graph.hpp"

namespace hacm {

/// Per-coordinate relative error |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of `f` at `x` with central
/// differences of step `eps`. Returns the maximum relative error over all
/// coordinates. Throws if `f` is not deterministic or does not return a scalar.
double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double eps = 1e-5);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Parameter form: `loss` evaluates the scalar at the current parameter
/// values; the analytic gradient is read from each Parameter::grad, which
/// the caller fills beforehand. Parameters are restored on return.
GradCheckReport finite_diff_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                                  double eps = 1e-5);

}  // namespace hacm
