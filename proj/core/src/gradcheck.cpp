// SPDX-License-Identifier: Apache-2.0
#include "hacm/gradcheck.hpp"

#include <cmath>

#include "hacm/error.hpp"

namespace hacm {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

namespace {

double eval_scalar(const std::function<Var(Var)>& f, const Tensor& x) {
  Graph g;
  g.set_grad_enabled(false);
  Var out = f(g.constant(x));
  return out.value().item();
}

}  // namespace

double finite_diff_check(const std::function<Var(Var)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");

  const double first = eval_scalar(f, x);
  const double second = eval_scalar(f, x);
  if (first != second) {
    throw GraphError("finite_diff_check: function is not deterministic");
  }

  Graph g;
  Var xv = g.variable(x);
  Var out = f(xv);
  g.backward(out);
  Tensor analytic = xv.grad();
  if (analytic.size() != x.size()) analytic = Tensor(x.shape());

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval_scalar(f, probe);
    probe[i] = orig - eps;
    const double down = eval_scalar(f, probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

GradCheckReport finite_diff_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                                  double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  if (loss() != loss()) {
    throw GraphError("finite_diff_check: loss is not deterministic");
  }
  GradCheckReport report;
  for (Parameter* p : params) {
    const bool have_grad = p->grad.size() == p->value.size();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = loss();
      p->value[i] = orig - eps;
      const double down = loss();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = have_grad ? p->grad[i] : 0.0;
      const double err = relative_error(analytic, numeric);
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = p->name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace hacm
