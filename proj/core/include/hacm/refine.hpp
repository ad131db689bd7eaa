// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "hacm/geometry.hpp"
#include "hacm/graph.hpp"
#include "hacm/rng.hpp"

// Prior refinement: torso pruning, strided temporal pooling, root tokens,
// positional embedding and the tokenwise map into the Poincare ball.
namespace hacm::refine {

/// Raw 3-D joint positions over time.
struct SkeletonSequence {
  Tensor coords;                   // [frames x joints x 3]
  std::vector<int> parents;        // joint tree, -1 marks the root
  std::vector<std::size_t> torso;  // joints removed by spatial pruning

  std::size_t frames() const { return coords.rank() == 3 ? coords.dim(0) : 0; }
  std::size_t joints() const { return coords.rank() == 3 ? coords.dim(1) : 0; }

  /// Throws ShapeError / DomainError when the invariants do not hold.
  void validate() const;
};

struct PrunedSequence {
  SkeletonSequence pruned;        // torso joints removed, parents re-rooted
  Tensor torso;                   // [frames x |torso| x 3]
  std::vector<std::size_t> kept;  // original id of each pruned joint
};

PrunedSequence spatial_prune(const SkeletonSequence& x);

/// Embedded token grid [frames x joints x channels] on a graph.
struct TokenGrid {
  Var values;
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 0;
  // Half-open raw-frame range covered by each pooled frame.
  std::vector<std::pair<std::size_t, std::size_t>> frame_origin;
};

struct PositionalTables {
  Parameter spatial;   // [1 x J' x C']
  Parameter temporal;  // [L' x 1 x C']
};

/// Learnable parameters of the refinement stage.
struct RefineParams {
  Parameter conv_weight;  // [3r x C']
  Parameter conv_bias;    // [C']
  PositionalTables positional;
};

struct RefineShape {
  std::size_t frames = 72;  // L, after crop and resampling
  std::size_t joints = 18;  // J' after pruning
  std::size_t pool_r = 3;
  std::size_t embed_dim = 256;
};

/// Fan-in uniform conv weights, zero bias, U(-0.02, 0.02) positional tables.
RefineParams init_refine(const RefineShape& shape, Rng& rng);

/// Kernel = stride = r temporal convolution lifting 3 -> C' channels.
TokenGrid temporal_pool(Var x, Var weight, Var bias, std::size_t r);

/// Pools the torso joints with the shared kernel, then averages them into a
/// single root token per pooled frame: [L' x 1 x C'].
Var root_features(Var torso, Var weight, Var bias, std::size_t r);

/// E = E_e + P_t + P_s with broadcasting.
TokenGrid add_positional(const TokenGrid& e, Var spatial, Var temporal);

/// exp_map_origin then ball_project on every token.
TokenGrid map_to_ball(const TokenGrid& e, const geometry::Curvature& c);

/// Everything the masking and encoding stages need from one sequence.
struct Embedded {
  TokenGrid euclidean;  // after positional embedding
  TokenGrid ball;       // mapped into the ball
  Var root_ball;        // [L' x 1 x C'] root tokens in the ball
  PrunedSequence pruned;
};

/// Runs the whole refinement stage on a sequence of `shape.frames` frames.
Embedded embed(Graph& g, RefineParams& params, const SkeletonSequence& x, const RefineShape& shape,
               const geometry::Curvature& c);

}  // namespace hacm::refine
