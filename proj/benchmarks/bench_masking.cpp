// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "hacm/geometry.hpp"
#include "hacm/masking.hpp"
#include "hacm/rng.hpp"

namespace {

// Default sizes: 12 pooled frames per half, 18 joints, 256 channels.
hacm::masking::HalfGrid half(hacm::Rng& rng) {
  hacm::masking::HalfGrid h;
  h.values = hacm::Tensor({12, 18, 256});
  for (double& v : h.values.values()) v = rng.uniform(-0.04, 0.04);
  for (std::size_t k = 0; k < 12; ++k) h.frames.push_back(2 * k + 1);
  return h;
}

void BM_HierarchyScores(benchmark::State& state) {
  hacm::Rng rng(1);
  const auto h = half(rng);
  hacm::Tensor root({12, 1, 256});
  const hacm::geometry::Curvature c(-1.0);
  for (auto _ : state) benchmark::DoNotOptimize(hacm::masking::hierarchy_scores(h, root, c).scores.data());
}
BENCHMARK(BM_HierarchyScores);

void BM_GcmStrategy1(benchmark::State& state) {
  hacm::Rng rng(2);
  const auto h = half(rng);
  const hacm::geometry::Curvature c(-1.0);
  for (auto _ : state) benchmark::DoNotOptimize(hacm::masking::gcm_strategy1(h, c).scores.data());
}
BENCHMARK(BM_GcmStrategy1);

void BM_GumbelUnmask(benchmark::State& state) {
  hacm::Rng rng(3);
  std::vector<double> scores(216);
  for (double& s : scores) s = rng.uniform();
  const std::size_t m = hacm::masking::unmasked_count(216, 0.9);
  for (auto _ : state) benchmark::DoNotOptimize(hacm::masking::gumbel_unmask(scores, m, 0.9, rng).data());
}
BENCHMARK(BM_GumbelUnmask);

}  // namespace
