// SPDX-License-Identifier: Apache-2.0
#include "hacm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hacm/error.hpp"
#include "hacm/ops.hpp"

namespace hacm::masking {
namespace {

void require_grid(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw ShapeError(std::string(op) + ": expected [frames x joints x channels], got " + shape_str(t.shape()));
}

// Row (frame k, joint j) of a [F x J x C] tensor.
std::span<const double> token(const Tensor& t, std::size_t k, std::size_t j) {
  const std::size_t c = t.dim(2);
  return {t.data() + (k * t.dim(1) + j) * c, c};
}

// One joint's frame sequence as [F x C].
Tensor joint_track(const Tensor& t, std::size_t j) {
  const std::size_t f = t.dim(0), c = t.dim(2);
  Tensor out({f, c});
  for (std::size_t k = 0; k < f; ++k) std::copy_n(token(t, k, j).data(), c, out.data() + k * c);
  return out;
}

bool is_temporal(Criterion c) { return c == Criterion::temporal1 || c == Criterion::temporal2; }

}  // namespace

std::vector<std::size_t> half_frames(std::size_t pooled_frames, Parity p) {
  std::vector<std::size_t> out;
  for (std::size_t t = p == Parity::odd ? 1 : 0; t < pooled_frames; t += 2) out.push_back(t);
  return out;
}

std::vector<std::size_t> canonical_frames(std::size_t pooled_frames) {
  std::vector<std::size_t> out = half_frames(pooled_frames, Parity::odd);
  const std::vector<std::size_t> even = half_frames(pooled_frames, Parity::even);
  out.insert(out.end(), even.begin(), even.end());
  return out;
}

std::pair<HalfGrid, HalfGrid> cross_group(const Tensor& grid) {
  require_grid(grid, "cross_group");
  const std::size_t frames = grid.dim(0), stride = grid.dim(1) * grid.dim(2);
  if (frames == 0 || frames % 2 != 0) {
    throw ShapeError("cross_group: pooled frame count " + std::to_string(frames) + " is not a positive even number");
  }
  auto take = [&](Parity p) {
    HalfGrid h;
    h.parity = p;
    h.frames = half_frames(frames, p);
    h.values = Tensor({h.frames.size(), grid.dim(1), grid.dim(2)});
    for (std::size_t k = 0; k < h.frames.size(); ++k)
      std::copy_n(grid.data() + h.frames[k] * stride, stride, h.values.data() + k * stride);
    return h;
  };
  return {take(Parity::odd), take(Parity::even)};
}

Tensor interleave(const HalfGrid& odd, const HalfGrid& even) {
  require_grid(odd.values, "interleave");
  require_grid(even.values, "interleave");
  if (odd.values.shape() != even.values.shape()) {
    throw ShapeError("interleave: halves " + shape_str(odd.values.shape()) + " and " + shape_str(even.values.shape()) +
                     " differ");
  }
  const std::size_t f = odd.values.dim(0), stride = odd.values.dim(1) * odd.values.dim(2);
  Tensor out({2 * f, odd.values.dim(1), odd.values.dim(2)});
  for (std::size_t k = 0; k < f; ++k) {
    std::copy_n(even.values.data() + k * stride, stride, out.data() + (2 * k) * stride);
    std::copy_n(odd.values.data() + k * stride, stride, out.data() + (2 * k + 1) * stride);
  }
  return out;
}

Var half_tokens(Var grid, Parity p) {
  const Shape s = grid.shape();
  if (s.size() != 3) throw ShapeError("half_tokens: expected a rank-3 grid, got " + shape_str(s));
  if (s[0] % 2 != 0) throw ShapeError("half_tokens: odd pooled frame count " + std::to_string(s[0]));
  const std::vector<std::size_t> frames = half_frames(s[0], p);
  Var rows = ops::gather_rows(ops::reshape(grid, {s[0], s[1] * s[2]}), frames);
  return ops::reshape(rows, {frames.size() * s[1], s[2]});
}

Criterion parse_criterion(std::string_view name) {
  if (name == "S" || name == "spatial") return Criterion::spatial;
  if (name == "T1" || name == "temporal1") return Criterion::temporal1;
  if (name == "T2" || name == "temporal2") return Criterion::temporal2;
  if (name == "motion" || name == "M") return Criterion::motion;
  throw ConfigError("unknown mask criterion '" + std::string(name) + "' (expected S, T1, T2 or motion)");
}

std::string criterion_name(Criterion c) {
  switch (c) {
    case Criterion::spatial: return "spatial";
    case Criterion::temporal1: return "temporal1";
    case Criterion::temporal2: return "temporal2";
    case Criterion::motion: return "motion";
  }
  return "?";
}

std::vector<double> CriteriaField::flat() const {
  if (!is_temporal(kind)) return {scores.values().begin(), scores.values().end()};
  const std::size_t joints = scores.dim(0), frames = scores.dim(1);
  std::vector<double> out(joints * frames);
  for (std::size_t j = 0; j < joints; ++j)
    for (std::size_t k = 0; k < frames; ++k) out[k * joints + j] = scores.at(j, k);
  return out;
}

CriteriaField hierarchy_scores(const HalfGrid& part, const Tensor& root, const geometry::Curvature& c) {
  const Tensor& u = part.values;
  require_grid(u, "hierarchy_scores");
  const std::size_t frames = u.dim(0), joints = u.dim(1), ch = u.dim(2);
  if (root.rows() != frames || root.cols() != ch) {
    throw ShapeError("hierarchy_scores: root " + shape_str(root.shape()) + " does not match half grid " +
                     shape_str(u.shape()));
  }
  CriteriaField out{Criterion::spatial, Tensor({frames, joints})};
  for (std::size_t k = 0; k < frames; ++k) {
    const std::span<const double> r = root.row(k);
    for (std::size_t i = 0; i < joints; ++i) out.scores.at(k, i) += geometry::distance(r, token(u, k, i), c);
    for (std::size_t i = 0; i < joints; ++i) {
      for (std::size_t j = i + 1; j < joints; ++j) {
        const double d = geometry::distance(token(u, k, i), token(u, k, j), c);
        out.scores.at(k, i) += d;
        out.scores.at(k, j) += d;
      }
    }
  }
  return out;
}

Tensor gcm_strategy1_matrix(const Tensor& frames, const geometry::Curvature& c) {
  if (frames.rank() != 2) throw ShapeError("gcm_strategy1: expected [frames x channels], got " + shape_str(frames.shape()));
  const std::size_t f = frames.dim(0);
  Tensor gcm({f, f});
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = i + 1; j < f; ++j) {
      const double s = 1.0 - std::cosh(geometry::distance(frames.row(i), frames.row(j), c));
      gcm.at(i, j) = s;
      gcm.at(j, i) = s;
    }
  }
  if (!gcm.all_finite()) throw NumericError("gcm_strategy1: similarity overflow");
  return gcm;
}

CriteriaField gcm_strategy1(const HalfGrid& part, const geometry::Curvature& c) {
  require_grid(part.values, "gcm_strategy1");
  const std::size_t frames = part.values.dim(0), joints = part.values.dim(1);
  CriteriaField out{Criterion::temporal1, Tensor({joints, frames})};
  for (std::size_t j = 0; j < joints; ++j) {
    const Tensor gcm = gcm_strategy1_matrix(joint_track(part.values, j), c);
    for (std::size_t i = 0; i < frames; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < frames; ++k) s += gcm.at(i, k);
      out.scores.at(j, i) = s;
    }
  }
  return out;
}

Tensor gcm_strategy2_matrix(const Tensor& frames, const Tensor& psi, const Tensor& phi) {
  if (frames.rank() != 2) throw ShapeError("gcm_strategy2: expected [frames x channels], got " + shape_str(frames.shape()));
  const std::size_t f = frames.dim(0), c = frames.dim(1);
  if (psi.shape() != Shape{c, c} || phi.shape() != Shape{c, c}) {
    throw ShapeError("gcm_strategy2: projections " + shape_str(psi.shape()) + ", " + shape_str(phi.shape()) +
                     " do not match " + std::to_string(c) + " channels");
  }
  Tensor q({f, c}), k({f, c}), s({f, f});
  kernels::gemm_nn(f, c, c, frames.data(), psi.data(), q.data());
  kernels::gemm_nn(f, c, c, frames.data(), phi.data(), k.data());
  kernels::gemm_nt(f, c, f, q.data(), k.data(), s.data());
  const double inv = 1.0 / std::sqrt(static_cast<double>(c));
  for (std::size_t i = 0; i < f; ++i) {
    double* row = s.data() + i * f;
    double m = row[0] * inv;
    for (std::size_t j = 0; j < f; ++j) {
      row[j] *= inv;
      m = std::max(m, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < f; ++j) z += (row[j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < f; ++j) row[j] /= z;
  }
  return s;
}

CriteriaField gcm_strategy2(const HalfGrid& part, const Tensor& psi, const Tensor& phi, SumAxis axis) {
  require_grid(part.values, "gcm_strategy2");
  const std::size_t frames = part.values.dim(0), joints = part.values.dim(1);
  CriteriaField out{Criterion::temporal2, Tensor({joints, frames})};
  for (std::size_t j = 0; j < joints; ++j) {
    const Tensor gcm = gcm_strategy2_matrix(joint_track(part.values, j), psi, phi);
    for (std::size_t i = 0; i < frames; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < frames; ++k) s += axis == SumAxis::last ? gcm.at(i, k) : gcm.at(k, i);
      out.scores.at(j, i) = s;
    }
  }
  return out;
}

Tensor motion_intensity(const Tensor& coords, std::size_t r) {
  if (coords.rank() != 3 || coords.dim(2) != 3) {
    throw ShapeError("motion_intensity: expected [frames x joints x 3], got " + shape_str(coords.shape()));
  }
  const std::size_t frames = coords.dim(0), joints = coords.dim(1);
  if (frames < 2) throw DomainError("motion_intensity: need at least 2 frames");
  if (r == 0 || frames % r != 0) {
    throw ShapeError("motion_intensity: r = " + std::to_string(r) + " does not divide " + std::to_string(frames));
  }
  Tensor out({frames / r, joints});
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      double sq = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double d = coords.at(t + 1, j, a) - coords.at(t, j, a);
        sq += d * d;
      }
      out.at(t / r, j) += std::sqrt(sq) / static_cast<double>(r);
    }
  }
  return out;
}

CriteriaField motion_intensity_scores(const Tensor& coords, std::size_t r, Parity p) {
  const Tensor full = motion_intensity(coords, r);
  const std::size_t pooled = full.dim(0), joints = full.dim(1);
  if (pooled % 2 != 0) throw ShapeError("motion_intensity_scores: odd pooled frame count");
  const std::vector<std::size_t> frames = half_frames(pooled, p);
  CriteriaField out{Criterion::motion, Tensor({frames.size(), joints})};
  for (std::size_t k = 0; k < frames.size(); ++k)
    for (std::size_t j = 0; j < joints; ++j) out.scores.at(k, j) = full.at(frames[k], j);
  return out;
}

std::size_t unmasked_count(std::size_t l, double mask_ratio) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("mask_ratio must lie in [0, 1), got " + std::to_string(mask_ratio));
  }
  if (l == 0) throw DomainError("unmasked_count: empty half");
  // The tolerance keeps exact products such as 0.5 * 54 from rounding up.
  const double m = std::ceil((1.0 - mask_ratio) * static_cast<double>(l) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(m, 1.0)), 1, l);
}

namespace {

// log softmax((s / max s) / tau) with the shift and zero guards applied.
std::vector<double> log_probabilities(std::span<const double> scores, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("gumbel_unmask: tau must be positive, got " + std::to_string(tau));
  if (scores.empty()) throw DomainError("gumbel_unmask: empty score list");
  std::vector<double> s(scores.begin(), scores.end());
  for (double v : s)
    if (!std::isfinite(v)) throw DomainError("gumbel_unmask: non-finite score");
  const double lo = *std::min_element(s.begin(), s.end());
  if (lo < 0.0)
    for (double& v : s) v -= lo;
  const double hi = *std::max_element(s.begin(), s.end());
  if (hi == 0.0) return std::vector<double>(s.size(), -std::log(static_cast<double>(s.size())));
  double m = -INFINITY;
  for (double& v : s) m = std::max(m, v = v / hi / tau);
  double z = 0.0;
  for (double v : s) z += std::exp(v - m);
  const double lse = m + std::log(z);
  for (double& v : s) v -= lse;
  return s;
}

}  // namespace

std::vector<double> selection_probabilities(std::span<const double> scores, double tau) {
  std::vector<double> p = log_probabilities(scores, tau);
  for (double& v : p) v = std::exp(v);
  return p;
}

std::vector<std::size_t> gumbel_unmask(std::span<const double> scores, std::size_t M, double tau, Rng& rng,
                                       bool use_gumbel) {
  const std::size_t l = scores.size();
  if (M == 0 || M > l) {
    throw DomainError("gumbel_unmask: M = " + std::to_string(M) + " outside [1, " + std::to_string(l) + "]");
  }
  std::vector<double> key = log_probabilities(scores, tau);
  if (use_gumbel)
    for (double& k : key) k += -std::log(-std::log(rng.uniform()));
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  order.resize(M);
  std::sort(order.begin(), order.end());
  return order;
}

MaskPlan MaskPlan::build(std::size_t l, std::vector<std::size_t> odd, std::vector<std::size_t> even, double tau,
                         std::uint64_t seed) {
  if (odd.size() != even.size()) {
    throw DomainError("mask plan: halves keep " + std::to_string(odd.size()) + " and " + std::to_string(even.size()) +
                      " tokens");
  }
  if (odd.empty()) throw DomainError("mask plan: at least one unmasked token per half is required");
  MaskPlan p;
  p.l = l;
  p.M = odd.size();
  p.tau = tau;
  p.seed = seed;
  p.keep_odd.assign(l, 0);
  p.keep_even.assign(l, 0);
  auto mark = [l](std::vector<std::size_t>& idx, std::vector<std::uint8_t>& keep, const char* half) {
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      if (i >= l) throw DomainError(std::string("mask plan: ") + half + " index " + std::to_string(i) + " >= l");
      if (keep[i]) throw DomainError(std::string("mask plan: duplicate ") + half + " index " + std::to_string(i));
      keep[i] = 1;
    }
  };
  mark(odd, p.keep_odd, "odd");
  mark(even, p.keep_even, "even");
  p.idx_odd = std::move(odd);
  p.idx_even = std::move(even);
  p.combined = p.idx_odd;
  for (std::size_t i : p.idx_even) p.combined.push_back(i + l);
  for (std::size_t i = 0; i < l; ++i)
    if (!p.keep_odd[i]) p.masked.push_back(i);
  for (std::size_t i = 0; i < l; ++i)
    if (!p.keep_even[i]) p.masked.push_back(i + l);
  return p;
}

Var extract_and_concat(Var odd_tokens, Var even_tokens, const MaskPlan& plan) {
  const Shape& so = odd_tokens.shape();
  const Shape& se = even_tokens.shape();
  if (so.size() != 2 || so != se || so[0] != plan.l) {
    throw ShapeError("extract_and_concat: halves " + shape_str(so) + ", " + shape_str(se) + " do not match l = " +
                     std::to_string(plan.l));
  }
  return ops::concat({ops::gather_rows(odd_tokens, plan.idx_odd), ops::gather_rows(even_tokens, plan.idx_even)}, 0);
}

CriteriaField criterion_scores(Criterion kind, const CriteriaInputs& in, Parity p, const geometry::Curvature& c,
                               SumAxis axis) {
  switch (kind) {
    case Criterion::spatial: {
      const HalfGrid part = p == Parity::odd ? cross_group(in.ball).first : cross_group(in.ball).second;
      const HalfGrid root = p == Parity::odd ? cross_group(in.root_ball).first : cross_group(in.root_ball).second;
      return hierarchy_scores(part, root.values, c);
    }
    case Criterion::temporal1: {
      auto halves = cross_group(in.ball);
      return gcm_strategy1(p == Parity::odd ? halves.first : halves.second, c);
    }
    case Criterion::temporal2: {
      if (in.psi == nullptr || in.phi == nullptr) throw ConfigError("temporal2 criterion needs psi/phi projections");
      auto halves = cross_group(in.euclidean);
      return gcm_strategy2(p == Parity::odd ? halves.first : halves.second, *in.psi, *in.phi, axis);
    }
    case Criterion::motion:
      return motion_intensity_scores(in.coords, in.pool_r, p);
  }
  throw ConfigError("criterion_scores: unhandled criterion");
}

HalfScores compute_criteria(const CriteriaInputs& in, const MaskingConfig& cfg, const geometry::Curvature& c) {
  return {criterion_scores(cfg.odd, in, Parity::odd, c, cfg.gcm_axis),
          criterion_scores(cfg.even, in, Parity::even, c, cfg.gcm_axis)};
}

MaskPlan plan_masks(const HalfScores& scores, const MaskingConfig& cfg, std::uint64_t seed) {
  std::vector<double> odd = scores.odd.flat(), even = scores.even.flat();
  if (odd.size() != even.size()) throw ShapeError("plan_masks: halves have different token counts");
  if (cfg.invert_criterion) {
    for (double& v : odd) v = -v;
    for (double& v : even) v = -v;
  }
  const std::size_t l = odd.size();
  const std::size_t M = unmasked_count(l, cfg.mask_ratio);
  Rng ro = Rng::split(seed, {0});
  Rng re = Rng::split(seed, {1});
  return MaskPlan::build(l, gumbel_unmask(odd, M, cfg.tau, ro, cfg.use_gumbel),
                         gumbel_unmask(even, M, cfg.tau, re, cfg.use_gumbel), cfg.tau, seed);
}

}  // namespace hacm::masking
