// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "hacm/geometry.hpp"
#include "hacm/graph.hpp"
#include "hacm/masking.hpp"

// Reconstruction target and losses. Token rows follow the canonical order
// described in masking.hpp.
namespace hacm::losses {

struct MotionTarget {
  Tensor values;  // [2l x 3r]
  bool ball_mapped = true;
};

/// First temporal difference (zero on the last frame) stacked over r frames:
/// [L/r x J x 3r], frame-major then xyz within a token.
Tensor stacked_motion(const Tensor& coords, std::size_t r);

/// stacked_motion reordered to canonical rows and, by default, mapped into
/// the ball token by token.
MotionTarget motion_target(const Tensor& coords, std::size_t r, const geometry::Curvature& c, bool ball_map = true);

enum class ReconNorm {
  masked,      // divide by the masked-token count 2(l - M)
  as_written,  // divide by 2M
};

/// Summed squared error over masked rows, normalised per `norm`.
Var recon_loss(Var pred, const MotionTarget& target, const masking::MaskPlan& plan, ReconNorm norm = ReconNorm::masked);

struct Pooled {
  Var odd;       // [1 x C], mean of rows [0, M)
  Var even;      // [1 x C], mean of rows [M, 2M)
  Var complete;  // [1 x C], mean of all rows
};

Pooled pool_halves(Var e_e, const masking::MaskPlan& plan);

enum class ContrastMode {
  as_written,  // third term compares even with even
  corrected,   // third term compares odd with even
};

/// Sum of |A B^T - I|_F^2 over (odd, complete), (even, complete) and the
/// mode's third pair, after L2-normalising every row. Inputs are [N x C]
/// with N >= 2.
Var cross_contrast_loss(Var odd, Var even, Var complete, ContrastMode mode = ContrastMode::as_written);

struct LossReport {
  double l_r = 0.0;
  double l_c2 = 0.0;
  double total = 0.0;
  double mu = 1.0;
  double grad_norm = 0.0;
};

/// total = l_r + mu * l_c2. Throws ConfigError for negative mu.
LossReport total_loss(double l_r, double l_c2, double mu);

}  // namespace hacm::losses
