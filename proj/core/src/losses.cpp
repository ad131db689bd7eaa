// SPDX-License-Identifier: Apache-2.0
#include "hacm/losses.hpp"

#include <cmath>
#include <string>

#include "hacm/error.hpp"
#include "hacm/ops.hpp"

namespace hacm::losses {

Tensor stacked_motion(const Tensor& coords, std::size_t r) {
  if (coords.rank() != 3 || coords.dim(2) != 3) {
    throw ShapeError("motion_target: expected [frames x joints x 3], got " + shape_str(coords.shape()));
  }
  const std::size_t frames = coords.dim(0), joints = coords.dim(1);
  if (r == 0 || frames % r != 0) {
    throw ShapeError("motion_target: r = " + std::to_string(r) + " does not divide " + std::to_string(frames));
  }
  Tensor out({frames / r, joints, 3 * r});
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j)
      for (std::size_t a = 0; a < 3; ++a)
        out.at(t / r, j, (t % r) * 3 + a) = coords.at(t + 1, j, a) - coords.at(t, j, a);
  }
  return out;
}

MotionTarget motion_target(const Tensor& coords, std::size_t r, const geometry::Curvature& c, bool ball_map) {
  const Tensor stacked = stacked_motion(coords, r);
  const std::size_t pooled = stacked.dim(0), joints = stacked.dim(1), w = stacked.dim(2);
  if (pooled % 2 != 0) throw ShapeError("motion_target: pooled frame count must be even");
  MotionTarget out;
  out.ball_mapped = ball_map;
  out.values = Tensor({pooled * joints, w});
  std::vector<double> tmp(w);
  std::size_t row = 0;
  for (std::size_t f : masking::canonical_frames(pooled)) {
    for (std::size_t j = 0; j < joints; ++j, ++row) {
      std::span<const double> src(stacked.data() + (f * joints + j) * w, w);
      std::span<double> dst = out.values.row(row);
      if (ball_map) {
        geometry::exp_map_origin(src, c, tmp);
        geometry::ball_project(tmp, c, dst);
      } else {
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  }
  return out;
}

Var recon_loss(Var pred, const MotionTarget& target, const masking::MaskPlan& plan, ReconNorm norm) {
  const Shape& s = pred.shape();
  if (s != target.values.shape() || s.size() != 2 || s[0] != 2 * plan.l) {
    throw ShapeError("recon_loss: prediction " + shape_str(s) + " vs target " + shape_str(target.values.shape()) +
                     " for l = " + std::to_string(plan.l));
  }
  if (plan.masked.empty()) throw DomainError("recon_loss: every token is unmasked, nothing to reconstruct");
  const std::size_t w = s[1];
  Tensor t({plan.masked.size(), w});
  for (std::size_t i = 0; i < plan.masked.size(); ++i) {
    const auto src = target.values.row(plan.masked[i]);
    std::copy(src.begin(), src.end(), t.row(i).begin());
  }
  Var diff = ops::sub(ops::gather_rows(pred, plan.masked), pred.graph().constant(std::move(t)));
  const double denom =
      norm == ReconNorm::masked ? static_cast<double>(2 * (plan.l - plan.M)) : static_cast<double>(2 * plan.M);
  return ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / denom);
}

Pooled pool_halves(Var e_e, const masking::MaskPlan& plan) {
  const Shape& s = e_e.shape();
  if (s.size() != 2 || s[0] != 2 * plan.M) {
    throw ShapeError("pool_halves: " + shape_str(s) + " does not hold 2M = " + std::to_string(2 * plan.M) + " rows");
  }
  return {ops::mean(ops::slice(e_e, 0, 0, plan.M), 0), ops::mean(ops::slice(e_e, 0, plan.M, plan.M), 0),
          ops::mean(e_e, 0)};
}

Var cross_contrast_loss(Var odd, Var even, Var complete, ContrastMode mode) {
  const Shape& s = odd.shape();
  if (s.size() != 2 || even.shape() != s || complete.shape() != s) {
    throw ShapeError("cross_contrast_loss: pooled matrices " + shape_str(s) + ", " + shape_str(even.shape()) + ", " +
                     shape_str(complete.shape()) + " differ");
  }
  const std::size_t n = s[0];
  if (n < 2) throw DomainError("cross_contrast_loss: needs a batch of at least 2, got " + std::to_string(n));
  Graph& g = odd.graph();
  Tensor eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  Var id = g.constant(std::move(eye));
  Var o = ops::l2_normalize(odd), e = ops::l2_normalize(even), c = ops::l2_normalize(complete);
  auto term = [&](Var a, Var b) {
    Var d = ops::sub(ops::matmul(a, ops::transpose(b)), id);
    return ops::sum(ops::mul(d, d));
  };
  Var third = mode == ContrastMode::as_written ? term(e, e) : term(o, e);
  return ops::add(ops::add(term(o, c), term(e, c)), third);
}

LossReport total_loss(double l_r, double l_c2, double mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be non-negative, got " + std::to_string(mu));
  LossReport r;
  r.l_r = l_r;
  r.l_c2 = l_c2;
  r.mu = mu;
  r.total = l_r + mu * l_c2;
  return r;
}

}  // namespace hacm::losses
