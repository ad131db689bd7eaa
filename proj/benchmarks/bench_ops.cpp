// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "hacm/network.hpp"
#include "hacm/ops.hpp"
#include "hacm/rng.hpp"

namespace {

hacm::Tensor random(hacm::Shape shape, hacm::Rng& rng) {
  hacm::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  hacm::Rng rng(1);
  const hacm::Tensor a = random({n, n}, rng), b = random({n, n}, rng);
  for (auto _ : state) {
    hacm::Graph g;
    benchmark::DoNotOptimize(hacm::ops::matmul(g.constant(a), g.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  hacm::Rng rng(2);
  hacm::Parameter a("a", random({n, n}, rng)), b("b", random({n, n}, rng));
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    hacm::Graph g;
    g.backward(hacm::ops::sum(hacm::ops::matmul(g.param(a), g.param(b))));
    benchmark::DoNotOptimize(a.grad.data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

// One attention layer over the encoder's 2M = 44 tokens and the decoder's
// 2l = 432 tokens at width 256.
void BM_Attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  hacm::Rng rng(3);
  const hacm::Tensor q = random({n, 256}, rng), k = random({n, 256}, rng), v = random({n, 256}, rng);
  for (auto _ : state) {
    hacm::Graph g;
    benchmark::DoNotOptimize(
        hacm::network::multi_head_attention(g.constant(q), g.constant(k), g.constant(v), 8).value().data());
  }
}
BENCHMARK(BM_Attention)->Arg(44)->Arg(432);

}  // namespace
