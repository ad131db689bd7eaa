// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "hacm/error.hpp"
#include "hacm/geometry.hpp"
#include "hacm/gradcheck.hpp"
#include "hacm/ops.hpp"
#include "hacm/refine.hpp"
#include "hacm/rng.hpp"

using namespace hacm;

namespace {

refine::SkeletonSequence chain(std::size_t frames, std::size_t joints, std::vector<std::size_t> torso, Rng& rng) {
  refine::SkeletonSequence s;
  s.coords = Tensor({frames, joints, 3});
  for (double& v : s.coords.values()) v = rng.normal() * 0.3;
  s.parents.push_back(-1);
  for (std::size_t j = 1; j < joints; ++j) s.parents.push_back(static_cast<int>(j - 1));
  s.torso = std::move(torso);
  return s;
}

}  // namespace

TEST_CASE("spatial pruning partitions the joints") {
  Rng rng(1);
  const auto x = chain(6, 25, {0, 1, 20, 4, 8, 12, 16}, rng);
  const auto p = refine::spatial_prune(x);
  CHECK(p.pruned.joints() == 18);
  CHECK(p.torso.dim(1) == 7);
  std::vector<std::size_t> all = p.kept;
  all.insert(all.end(), x.torso.begin(), x.torso.end());
  std::sort(all.begin(), all.end());
  for (std::size_t j = 0; j < 25; ++j) CHECK(all[j] == j);
  for (std::size_t i = 0; i < p.kept.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) CHECK(p.pruned.coords.at(2, i, a) == x.coords.at(2, p.kept[i], a));
  p.pruned.validate();

  auto empty = x;
  empty.torso.clear();
  CHECK_THROWS(refine::spatial_prune(empty));
  auto everything = chain(4, 3, {0, 1, 2}, rng);
  CHECK_THROWS(refine::spatial_prune(everything));
  auto dup = chain(4, 3, {1, 1}, rng);
  CHECK_THROWS(refine::spatial_prune(dup));
}

TEST_CASE("temporal pooling shapes and constants") {
  Graph g;
  Rng rng(2);
  Tensor x({72, 18, 3});
  for (double& v : x.values()) v = rng.normal();
  Tensor w({9, 256}), b({256});
  const auto grid = refine::temporal_pool(g.constant(x), g.constant(w), g.constant(b), 3);
  CHECK(grid.values.shape() == Shape{24, 18, 256});
  CHECK(grid.frame_origin.size() == 24);
  CHECK(grid.frame_origin[1].first == 3);
  CHECK(grid.frame_origin[1].second == 6);
  CHECK_THROWS(refine::temporal_pool(g.constant(Tensor({70, 18, 3})), g.constant(w), g.constant(b), 3));

  // Averaging kernel with C' = 3: constant in, constant out, exactly.
  Tensor c({6, 2, 3}, 0.0);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 3; ++a) c.at(t, j, a) = 0.25 * static_cast<double>(a + 1);
  Tensor avg({6, 3});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t a = 0; a < 3; ++a) avg.at(s * 3 + a, a) = 0.5;
  const Tensor out = refine::temporal_pool(g.constant(c), g.constant(avg), g.constant(Tensor({3})), 2).values.value();
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 3; ++a) CHECK(out.at(t, j, a) == c.at(0, 0, a));
}

TEST_CASE("root features") {
  Graph g;
  Rng rng(3);
  Tensor w({6, 4}), b({4});
  for (double& v : w.values()) v = rng.normal();
  Tensor one({8, 1, 3});
  for (double& v : one.values()) v = rng.normal();
  const Tensor root = refine::root_features(g.constant(one), g.constant(w), g.constant(b), 2).value();
  const Tensor pooled = refine::temporal_pool(g.constant(one), g.constant(w), g.constant(b), 2).values.value();
  CHECK(root.shape() == Shape{4, 1, 4});
  CHECK(root == pooled);

  Tensor same({8, 3, 3});
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t a = 0; a < 3; ++a) same.at(t, j, a) = one.at(t, 0, a);
  const Tensor r3 = refine::root_features(g.constant(same), g.constant(w), g.constant(b), 2).value();
  for (std::size_t i = 0; i < r3.size(); ++i) CHECK(r3[i] == doctest::Approx(root[i]).epsilon(1e-14));
  CHECK_THROWS(refine::root_features(g.constant(Tensor({8, 0, 3})), g.constant(w), g.constant(b), 2));
}

TEST_CASE("positional broadcast algebra") {
  Graph g;
  Rng rng(4);
  Tensor e({4, 3, 5}), ps({1, 3, 5}), pt({4, 1, 5});
  for (double& v : e.values()) v = rng.normal();
  for (double& v : ps.values()) v = rng.normal();
  for (double& v : pt.values()) v = rng.normal();
  refine::TokenGrid grid{g.constant(e), 4, 3, 5, {}};
  const Tensor zero = refine::add_positional(grid, g.constant(Tensor({1, 3, 5})), g.constant(Tensor({4, 1, 5})))
                          .values.value();
  CHECK(zero == e);
  const Tensor out = refine::add_positional(grid, g.constant(ps), g.constant(pt)).values.value();
  for (std::size_t k = 0; k < 5; ++k) {
    // Same joint, frames 0 and 2.
    const double d_frames = (out.at(2, 1, k) - e.at(2, 1, k)) - (out.at(0, 1, k) - e.at(0, 1, k));
    CHECK(d_frames == doctest::Approx(pt.at(2, 0, k) - pt.at(0, 0, k)).epsilon(1e-13));
    const double d_joints = (out.at(3, 2, k) - e.at(3, 2, k)) - (out.at(3, 0, k) - e.at(3, 0, k));
    CHECK(d_joints == doctest::Approx(ps.at(0, 2, k) - ps.at(0, 0, k)).epsilon(1e-13));
  }
  CHECK_THROWS(refine::add_positional(grid, g.constant(Tensor({1, 2, 5})), g.constant(pt)));
}

TEST_CASE("map to ball") {
  const geometry::Curvature c(-1.0);
  Graph g;
  Rng rng(5);
  Tensor e({3, 4, 6});
  for (double& v : e.values()) v = rng.normal() * 50.0;
  const Tensor b = refine::map_to_ball({g.constant(e), 3, 4, 6, {}}, c).values.value();
  for (std::size_t r = 0; r < 12; ++r) {
    double n = 0.0;
    for (double v : b.row(r)) n += v * v;
    CHECK(std::sqrt(n) < 1.0);
  }
  for (std::size_t r = 0; r < 10; ++r) {
    const auto p = geometry::ball_project(geometry::exp_map_origin(e.row(r), c).coords(), c);
    for (std::size_t k = 0; k < 6; ++k) CHECK(b.row(r)[k] == p[k]);
  }
  const Tensor z = refine::map_to_ball({g.constant(Tensor({2, 2, 3})), 2, 2, 3, {}}, c).values.value();
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("embedding gradients on a small grid") {
  const geometry::Curvature c(-1.0);
  Rng rng(6);
  Tensor x({4, 3, 3});
  for (double& v : x.values()) v = rng.normal() * 0.5;
  Tensor w({6, 2}), ps({1, 3, 2}), pt({2, 1, 2});
  for (double& v : w.values()) v = rng.normal();
  for (double& v : ps.values()) v = rng.normal() * 0.1;
  for (double& v : pt.values()) v = rng.normal() * 0.1;
  auto f = [&](Var wv) {
    Graph& g = wv.graph();
    auto grid = refine::temporal_pool(g.constant(x), wv, g.constant(Tensor({2})), 2);
    grid = refine::map_to_ball(refine::add_positional(grid, g.constant(ps), g.constant(pt)), c);
    Tensor m(grid.values.shape());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::sin(static_cast<double>(i));
    return ops::sum(ops::mul(grid.values, g.constant(std::move(m))));
  };
  CHECK(finite_diff_check(f, w) < 1e-4);
}

TEST_CASE("embed produces the default shapes") {
  Rng rng(7);
  const auto x = chain(72, 25, {0, 1, 20, 4, 8, 12, 16}, rng);
  refine::RefineShape shape;
  shape.embed_dim = 16;
  auto params = refine::init_refine(shape, rng);
  Graph g;
  const auto emb = refine::embed(g, params, x, shape, geometry::Curvature(-1.0));
  CHECK(emb.ball.values.shape() == Shape{24, 18, 16});
  CHECK(emb.root_ball.shape() == Shape{24, 1, 16});
  for (double v : params.positional.spatial.value.values()) CHECK(std::abs(v) <= 0.02);
  for (double v : params.conv_bias.value.values()) CHECK(v == 0.0);
}
