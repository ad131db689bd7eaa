// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hacm/geometry.hpp"
#include "hacm/graph.hpp"
#include "hacm/rng.hpp"

// Cross-masking: odd/even frame grouping, per-half mask criteria, Gumbel-Max
// unmask sampling and the index bookkeeping shared with the decoder and loss.
//
// Token order. A half holds F = L'/2 pooled frames of J' joints; its flat
// index is k*J' + i for within-half frame k and joint i. The canonical order
// over both halves is the odd half followed by the even half, so canonical
// position p < l belongs to the odd half and p >= l to the even half.
namespace hacm::masking {

enum class Parity { odd, even };

/// Pooled-frame indices of one half in within-half order: odd = 1, 3, ...;
/// even = 0, 2, ...
std::vector<std::size_t> half_frames(std::size_t pooled_frames, Parity p);

/// Pooled frame of each canonical token row divided by J', i.e. the odd
/// frames followed by the even frames.
std::vector<std::size_t> canonical_frames(std::size_t pooled_frames);

struct HalfGrid {
  Parity parity = Parity::odd;
  Tensor values;                    // [F x J' x C]
  std::vector<std::size_t> frames;  // pooled frame of each row
};

/// Splits a [L' x J' x C] grid by frame parity. Throws ShapeError if L' is odd.
std::pair<HalfGrid, HalfGrid> cross_group(const Tensor& grid);
/// Inverse of cross_group.
Tensor interleave(const HalfGrid& odd, const HalfGrid& even);
/// Differentiable half selection flattened to [F*J' x C] rows.
Var half_tokens(Var grid, Parity p);

enum class Criterion { spatial, temporal1, temporal2, motion };

/// Accepts "S", "T1", "T2", "motion" and the long names below.
Criterion parse_criterion(std::string_view name);
/// "spatial", "temporal1", "temporal2", "motion".
std::string criterion_name(Criterion c);

/// Which GCM axis strategy 2 sums over when forming T_C.
enum class SumAxis { last, first };

struct CriteriaField {
  Criterion kind = Criterion::spatial;
  // [F x J'] for spatial and motion, [J' x F] for the temporal criteria.
  Tensor scores;

  /// Scores in within-half flat order k*J' + i.
  std::vector<double> flat() const;
};

/// Per frame: distance to the root plus distances to every joint of the
/// frame (self included), summed per joint. `root` is [F x 1 x C] or [F x C].
CriteriaField hierarchy_scores(const HalfGrid& part, const Tensor& root, const geometry::Curvature& c);

/// [F x F] matrix 1 - cosh(d(u_i, u_j)) for one joint's frame sequence [F x C].
Tensor gcm_strategy1_matrix(const Tensor& frames, const geometry::Curvature& c);
/// T_C[k][i] = sum_j GCM_k[i][j] with hyperbolic-similarity GCMs.
CriteriaField gcm_strategy1(const HalfGrid& part, const geometry::Curvature& c);

/// softmax((X psi)(X phi)^T / sqrt(C)) over the last axis for X [F x C].
Tensor gcm_strategy2_matrix(const Tensor& frames, const Tensor& psi, const Tensor& phi);
/// Attention GCMs on Euclidean features; `axis` picks which index is summed.
CriteriaField gcm_strategy2(const HalfGrid& part, const Tensor& psi, const Tensor& phi, SumAxis axis = SumAxis::last);

/// Per-joint displacement |x_{t+1} - x_t| (zero on the last frame), averaged
/// over each r-frame segment: [L/r x J]. Throws for fewer than 2 frames.
Tensor motion_intensity(const Tensor& coords, std::size_t r);
/// The rows of motion_intensity belonging to one half.
CriteriaField motion_intensity_scores(const Tensor& coords, std::size_t r, Parity p);

/// ceil((1 - mask_ratio) * l), at least 1.
std::size_t unmasked_count(std::size_t l, double mask_ratio);

/// pi = softmax((s / max s) / tau) after shifting s to be non-negative when
/// it has negative entries; uniform when every score is zero.
std::vector<double> selection_probabilities(std::span<const double> scores, double tau);

/// Indices of the M largest log(pi) + Gumbel noise, ascending. Without
/// Gumbel noise this is a deterministic top-M of pi (ties by index).
std::vector<std::size_t> gumbel_unmask(std::span<const double> scores, std::size_t M, double tau, Rng& rng,
                                       bool use_gumbel = true);

struct MaskPlan {
  std::size_t l = 0;
  std::size_t M = 0;
  std::vector<std::size_t> idx_odd;   // ascending, in [0, l)
  std::vector<std::size_t> idx_even;  // ascending, in [0, l)
  std::vector<std::size_t> combined;  // idx_odd, then idx_even + l
  std::vector<std::size_t> masked;    // canonical positions not in `combined`, ascending
  std::vector<std::uint8_t> keep_odd;   // 1 = unmasked
  std::vector<std::uint8_t> keep_even;  // 1 = unmasked
  double tau = 0.0;
  std::uint64_t seed = 0;

  /// Validates and sorts both lists. Throws DomainError on duplicates,
  /// out-of-range entries or lists of different length.
  static MaskPlan build(std::size_t l, std::vector<std::size_t> odd, std::vector<std::size_t> even, double tau = 0.0,
                        std::uint64_t seed = 0);
};

/// Unmasked rows of both halves ([l x C] each) stacked: [2M x C].
Var extract_and_concat(Var odd_tokens, Var even_tokens, const MaskPlan& plan);

struct MaskingConfig {
  double mask_ratio = 0.9;
  double tau = 0.9;
  Criterion odd = Criterion::temporal1;
  Criterion even = Criterion::spatial;
  bool use_gumbel = true;
  bool invert_criterion = false;
  SumAxis gcm_axis = SumAxis::last;
};

/// Inputs the criteria read; all values are detached from any graph.
struct CriteriaInputs {
  Tensor ball;         // [L' x J' x C] tokens in the ball
  Tensor euclidean;    // [L' x J' x C] before the ball map
  Tensor root_ball;    // [L' x 1 x C]
  Tensor coords;       // [L x J' x 3] pruned raw coordinates
  std::size_t pool_r = 1;
  const Tensor* psi = nullptr;  // [C x C], strategy 2 only
  const Tensor* phi = nullptr;
};

struct HalfScores {
  CriteriaField odd;
  CriteriaField even;
};

CriteriaField criterion_scores(Criterion kind, const CriteriaInputs& in, Parity p, const geometry::Curvature& c,
                               SumAxis axis = SumAxis::last);
HalfScores compute_criteria(const CriteriaInputs& in, const MaskingConfig& cfg, const geometry::Curvature& c);

/// Samples both halves with streams split from `seed`.
MaskPlan plan_masks(const HalfScores& scores, const MaskingConfig& cfg, std::uint64_t seed);

}  // namespace hacm::masking
