// SPDX-License-Identifier: Apache-2.0
#include "hacm/refine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hacm/error.hpp"
#include "hacm/ops.hpp"

namespace hacm::refine {

void SkeletonSequence::validate() const {
  if (coords.rank() != 3 || coords.dim(2) != 3) {
    throw ShapeError("skeleton sequence: coords must be [frames x joints x 3], got " + shape_str(coords.shape()));
  }
  if (!coords.all_finite()) throw DomainError("skeleton sequence: non-finite coordinate");
  const std::size_t j = joints();
  if (!parents.empty()) {
    if (parents.size() != j) throw ShapeError("skeleton sequence: parent list does not match joint count");
    std::size_t roots = 0;
    for (std::size_t i = 0; i < j; ++i) {
      if (parents[i] < 0) {
        ++roots;
        continue;
      }
      if (static_cast<std::size_t>(parents[i]) >= j) throw DomainError("skeleton sequence: parent out of range");
      // Walking up must terminate within j steps in a tree.
      std::size_t steps = 0;
      for (int p = parents[i]; p >= 0; p = parents[static_cast<std::size_t>(p)]) {
        if (++steps > j) throw DomainError("skeleton sequence: joint tree has a cycle");
      }
    }
    if (roots != 1) throw DomainError("skeleton sequence: joint tree must have exactly one root");
  }
  for (std::size_t t : torso) {
    if (t >= j) throw DomainError("skeleton sequence: torso joint " + std::to_string(t) + " out of range");
  }
}

PrunedSequence spatial_prune(const SkeletonSequence& x) {
  x.validate();
  const std::size_t joints = x.joints(), frames = x.frames();
  if (x.torso.empty()) throw ConfigError("spatial_prune: torso set is empty");
  std::vector<bool> is_torso(joints, false);
  for (std::size_t t : x.torso) {
    if (is_torso[t]) throw ConfigError("spatial_prune: torso joint " + std::to_string(t) + " listed twice");
    is_torso[t] = true;
  }
  if (x.torso.size() >= joints) throw ConfigError("spatial_prune: torso set covers every joint");

  PrunedSequence out;
  for (std::size_t j = 0; j < joints; ++j)
    if (!is_torso[j]) out.kept.push_back(j);

  const std::size_t kept = out.kept.size(), nt = x.torso.size();
  out.pruned.coords = Tensor({frames, kept, 3});
  out.torso = Tensor({frames, nt, 3});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t j = 0; j < kept; ++j)
      for (std::size_t c = 0; c < 3; ++c) out.pruned.coords.at(f, j, c) = x.coords.at(f, out.kept[j], c);
    for (std::size_t j = 0; j < nt; ++j)
      for (std::size_t c = 0; c < 3; ++c) out.torso.at(f, j, c) = x.coords.at(f, x.torso[j], c);
  }

  if (!x.parents.empty()) {
    std::vector<int> new_id(joints, -1);
    for (std::size_t j = 0; j < kept; ++j) new_id[out.kept[j]] = static_cast<int>(j);
    out.pruned.parents.resize(kept, -1);
    for (std::size_t j = 0; j < kept; ++j) {
      int p = x.parents[out.kept[j]];
      while (p >= 0 && is_torso[static_cast<std::size_t>(p)]) p = x.parents[static_cast<std::size_t>(p)];
      out.pruned.parents[j] = p >= 0 ? new_id[static_cast<std::size_t>(p)] : -1;
    }
  }
  return out;
}

RefineParams init_refine(const RefineShape& shape, Rng& rng) {
  const std::size_t fan_in = 3 * shape.pool_r;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  RefineParams p;
  Tensor w({fan_in, shape.embed_dim});
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  p.conv_weight = Parameter("refine.conv.weight", std::move(w), true, true);
  p.conv_bias = Parameter("refine.conv.bias", Tensor({shape.embed_dim}));

  if (shape.frames % shape.pool_r != 0) {
    throw ConfigError("refine: pool_r " + std::to_string(shape.pool_r) + " does not divide " +
                      std::to_string(shape.frames) + " frames");
  }
  Tensor ps({1, shape.joints, shape.embed_dim});
  for (double& v : ps.values()) v = rng.uniform(-0.02, 0.02);
  Tensor pt({shape.frames / shape.pool_r, 1, shape.embed_dim});
  for (double& v : pt.values()) v = rng.uniform(-0.02, 0.02);
  p.positional.spatial = Parameter("refine.pos.spatial", std::move(ps));
  p.positional.temporal = Parameter("refine.pos.temporal", std::move(pt));
  return p;
}

TokenGrid temporal_pool(Var x, Var weight, Var bias, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("temporal_pool: input must be [L x J x 3], got " + shape_str(s));
  if (r == 0 || s[0] % r != 0) {
    throw ShapeError("temporal_pool: r = " + std::to_string(r) + " does not divide L = " + std::to_string(s[0]));
  }
  TokenGrid out;
  out.values = ops::temporal_conv(x, weight, bias, r);
  out.frames = s[0] / r;
  out.joints = s[1];
  out.channels = out.values.shape()[2];
  for (std::size_t t = 0; t < out.frames; ++t) out.frame_origin.emplace_back(t * r, (t + 1) * r);
  return out;
}

Var root_features(Var torso, Var weight, Var bias, std::size_t r) {
  const Shape& s = torso.shape();
  if (s.size() != 3 || s[1] == 0) throw ShapeError("root_features: empty torso input " + shape_str(s));
  return ops::mean(temporal_pool(torso, weight, bias, r).values, 1);
}

TokenGrid add_positional(const TokenGrid& e, Var spatial, Var temporal) {
  const Shape& ss = spatial.shape();
  const Shape& ts = temporal.shape();
  if (ss != Shape{1, e.joints, e.channels} || ts != Shape{e.frames, 1, e.channels}) {
    throw ShapeError("add_positional: tables " + shape_str(ss) + ", " + shape_str(ts) + " do not fit grid " +
                     shape_str(e.values.shape()));
  }
  TokenGrid out = e;
  out.values = ops::add(ops::add(e.values, temporal), spatial);
  return out;
}

TokenGrid map_to_ball(const TokenGrid& e, const geometry::Curvature& c) {
  TokenGrid out = e;
  out.values = geometry::to_ball(e.values, c);
  return out;
}

Embedded embed(Graph& g, RefineParams& params, const SkeletonSequence& x, const RefineShape& shape,
               const geometry::Curvature& c) {
  if (x.frames() != shape.frames) {
    throw ShapeError("embed: expected " + std::to_string(shape.frames) + " frames, got " +
                     std::to_string(x.frames()));
  }
  Embedded out;
  out.pruned = spatial_prune(x);
  if (out.pruned.pruned.joints() != shape.joints) {
    throw ConfigError("embed: pruning leaves " + std::to_string(out.pruned.pruned.joints()) +
                      " joints but the model expects " + std::to_string(shape.joints));
  }
  Var w = g.param(params.conv_weight);
  Var b = g.param(params.conv_bias);
  TokenGrid pooled = temporal_pool(g.constant(out.pruned.pruned.coords), w, b, shape.pool_r);
  Var root = root_features(g.constant(out.pruned.torso), w, b, shape.pool_r);
  out.euclidean = add_positional(pooled, g.param(params.positional.spatial), g.param(params.positional.temporal));
  out.ball = map_to_ball(out.euclidean, c);
  out.root_ball = geometry::to_ball(root, c);
  return out;
}

}  // namespace hacm::refine
