// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "hacm/error.hpp"
#include "hacm/gradcheck.hpp"
#include "hacm/graph.hpp"
#include "hacm/ops.hpp"
#include "hacm/rng.hpp"

using namespace hacm;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum so every output element carries a distinct upstream gradient.
Var weighted(Var y, Rng& rng) {
  Tensor w(y.shape());
  for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(y, y.graph().constant(std::move(w))));
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.cols() == 4);
  CHECK(t.rows() == 6);
  CHECK(shape_str(t.shape()) == "[2x3x4]");
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("forward examples") {
  Graph g;
  Tensor eye({2, 2}, {1, 0, 0, 1}), m({2, 2}, {3, -1, 2, 5});
  CHECK(ops::matmul(g.constant(eye), g.constant(m)).value() == m);

  const Tensor sm = ops::softmax(g.constant(Tensor({1, 3}))).value();
  for (double v : sm.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor ln = ops::layer_norm(g.constant(Tensor({1, 3}, {1, 2, 3})), 0.0).value();
  const double mean = (ln[0] + ln[1] + ln[2]) / 3.0;
  const double var = (ln[0] * ln[0] + ln[1] * ln[1] + ln[2] * ln[2]) / 3.0 - mean * mean;
  CHECK(std::abs(mean) < 1e-15);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(1);
  Graph g;
  const Tensor s = ops::softmax(g.constant(random_tensor({7, 9}, rng, -20, 20))).value();
  for (std::size_t r = 0; r < 7; ++r) {
    double z = 0;
    for (double v : s.row(r)) z += v;
    CHECK(std::abs(z - 1.0) < 1e-12);
  }
}

TEST_CASE("matmul associativity") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Graph g;
    Var a = g.constant(random_tensor({3, 3}, rng)), b = g.constant(random_tensor({3, 3}, rng)),
        c = g.constant(random_tensor({3, 3}, rng));
    const Tensor l = ops::matmul(ops::matmul(a, b), c).value(), r = ops::matmul(a, ops::matmul(b, c)).value();
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(l[i] - r[i]) < 1e-9);
  }
}

TEST_CASE("gemm kernels agree with the naive triple loop") {
  Rng rng(3);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {5, 7, 3}, {9, 4, 13}, {6, 10, 5}}) {
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tensor ref({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) ref.at(i, j) += a.at(i, p) * b.at(p, j);
    Tensor c({m, n});
    kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data());
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // a b = (b^T)^T: gemm_nt takes the right operand as [n x k].
    Tensor bt({n, k});
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) bt.at(j, p) = b.at(p, j);
    Tensor c2({m, n});
    kernels::gemm_nt(m, k, n, a.data(), bt.data(), c2.data());
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // gemm_tn accumulates a^T d into [k x n].
    Tensor at({k, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) at.at(p, i) = a.at(i, p);
    const Tensor d = random_tensor({m, n}, rng);
    Tensor c3({k, n}), ref3({k, n});
    kernels::gemm_tn(m, k, n, a.data(), d.data(), c3.data());
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) ref3.at(p, j) += a.at(i, p) * d.at(i, j);
    for (std::size_t i = 0; i < k * n; ++i) CHECK(c3[i] == doctest::Approx(ref3[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward examples") {
  Graph g;
  Var x = g.variable(Tensor({2}, {1, 2}));
  g.backward(ops::sum(ops::mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK_THROWS_AS(g.backward(ops::sum(x)), GraphError);

  Graph g2;
  Var y = g2.variable(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(g2.backward(y), GraphError);  // not a scalar

  Graph g3;
  Var z = g3.variable(Tensor({3}, {1, 2, 3}));
  Var c = ops::add(ops::scale(ops::sum(z), 0.0), g3.constant(Tensor::scalar(4.0)));
  g3.backward(c);
  for (double v : z.grad().values()) CHECK(v == 0.0);
}

TEST_CASE("parameter leaves accumulate") {
  Parameter p("w", Tensor({2}, {1.0, -1.0}));
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Var w = g.param(p);
    g.backward(ops::sum(ops::mul(w, w)));
  }
  CHECK(p.grad[0] == 4.0);
  CHECK(p.grad[1] == -4.0);
}

TEST_CASE("errors name the primitive") {
  Graph g;
  Var a = g.constant(Tensor({2, 3})), b = g.constant(Tensor({2, 3}));
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, g.constant(Tensor({3, 2}))), ShapeError);
  CHECK_THROWS_AS(ops::atanh(g.constant(Tensor({1}, {1.5}))), DomainError);
  CHECK_THROWS_AS(ops::log(g.constant(Tensor({1}, {-1.0}))), Error);
}

TEST_CASE("atanh clamp is counted") {
  const std::size_t before = ops::atanh_clamp_count();
  const double v = ops::atanh_clamped(1.0);
  CHECK(std::isfinite(v));
  CHECK(ops::atanh_clamp_count() == before + 1);
  CHECK(ops::atanh_clamped(0.5) == doctest::Approx(0.5493061443340549).epsilon(1e-15));
  CHECK(ops::atanh_clamp_count() == before + 1);
  CHECK_THROWS_AS(ops::atanh_clamped(1.0 + 1e-9), DomainError);
}

TEST_CASE("finite_diff_check harness") {
  auto square = [](Var x) { return ops::sum(ops::mul(x, x)); };
  CHECK(finite_diff_check(square, Tensor({1}, {3.0})) < 1e-6);
  auto constant = [](Var x) { return ops::add_scalar(ops::scale(ops::sum(x), 0.0), 2.0); };
  CHECK(finite_diff_check(constant, Tensor({2}, {1.0, 2.0})) == 0.0);

  int calls = 0;
  auto flaky = [&calls](Var x) { return ops::scale(ops::sum(x), 1.0 + 1e-3 * ++calls); };
  CHECK_THROWS(finite_diff_check(flaky, Tensor({1}, {1.0})));
  CHECK(relative_error(1.0, 1.0) == 0.0);
}

TEST_CASE("matmul chain gradient") {
  Rng rng(4);
  const Tensor b = random_tensor({3, 4}, rng), c = random_tensor({4, 2}, rng);
  auto f = [&](Var a) {
    Graph& g = a.graph();
    return ops::sum(ops::matmul(ops::matmul(a, g.constant(b)), g.constant(c)));
  };
  CHECK(finite_diff_check(f, random_tensor({2, 3}, rng)) < 1e-5);
}

// Every differentiable primitive on 100 random small shapes.
TEST_CASE("primitive gradients match central differences") {
  Rng rng(5);
  struct Case {
    const char* name;
    std::function<Var(Var, Rng&)> f;
    double lo, hi;
    bool rank2 = false;
  };
  const std::vector<Case> cases{
      {"add", [](Var x, Rng& r) { return ops::add(x, x.graph().constant(random_tensor(x.shape(), r))); }, -1, 1},
      {"sub", [](Var x, Rng& r) { return ops::sub(x.graph().constant(random_tensor(x.shape(), r)), x); }, -1, 1},
      {"mul", [](Var x, Rng&) { return ops::mul(x, ops::tanh(x)); }, -1, 1},
      {"scale", [](Var x, Rng&) { return ops::add_scalar(ops::scale(x, -1.7), 0.3); }, -1, 1},
      {"softmax", [](Var x, Rng&) { return ops::softmax(x); }, -3, 3},
      {"layer_norm", [](Var x, Rng&) { return ops::layer_norm(x); }, -2, 2},
      {"gelu", [](Var x, Rng&) { return ops::gelu(x); }, -3, 3},
      {"tanh", [](Var x, Rng&) { return ops::tanh(x); }, -2, 2},
      {"atanh", [](Var x, Rng&) { return ops::atanh(x); }, -0.9, 0.9},
      {"cosh", [](Var x, Rng&) { return ops::cosh(x); }, -2, 2},
      {"exp", [](Var x, Rng&) { return ops::exp(x); }, -2, 2},
      {"log", [](Var x, Rng&) { return ops::log(x); }, 0.5, 2},
      {"sqrt", [](Var x, Rng&) { return ops::sqrt(x); }, 0.5, 2},
      {"norm", [](Var x, Rng&) { return ops::norm(x); }, -1, 1},
      {"l2_normalize", [](Var x, Rng&) { return ops::l2_normalize(x); }, -1, 1},
      {"mean0", [](Var x, Rng&) { return ops::mean(x, 0); }, -1, 1},
      {"sum", [](Var x, Rng&) { return ops::mul(ops::sum(x), ops::sum(x)); }, -1, 1},
      {"mean_all", [](Var x, Rng&) { return ops::mean_all(ops::mul(x, x)); }, -1, 1},
      {"transpose", [](Var x, Rng&) { return ops::transpose(x); }, -1, 1, true},
      {"matmul", [](Var x, Rng&) { return ops::matmul(x, ops::transpose(x)); }, -1, 1, true},
      {"concat", [](Var x, Rng&) { return ops::concat({x, ops::tanh(x)}, 0); }, -1, 1},
      {"slice", [](Var x, Rng&) { return ops::slice(x, 0, 0, 1); }, -1, 1},
      {"gather", [](Var x, Rng&) {
         const std::vector<std::size_t> idx{0, 0, x.shape()[0] - 1};
         return ops::gather_rows(x, idx);
       }, -1, 1, true},
      {"scatter", [](Var x, Rng&) {
         std::vector<std::size_t> idx;
         for (std::size_t i = 0; i < x.shape()[0]; ++i) idx.push_back(2 * i);
         return ops::scatter_rows(x, idx, 2 * x.shape()[0]);
       }, -1, 1, true},
  };
  int trials = 0;
  for (int t = 0; t < 100; ++t) {
    const Case& c = cases[static_cast<std::size_t>(t) % cases.size()];
    Shape s;
    const std::size_t rank = c.rank2 ? 2 : 1 + rng.below(3);
    for (std::size_t d = 0; d < rank; ++d) s.push_back(1 + rng.below(4));
    const Tensor x = random_tensor(s, rng, c.lo, c.hi);
    const std::uint64_t seed = rng.next();
    auto f = [&](Var v) {
      Rng local(seed);
      Var y = c.f(v, local);
      return weighted(y, local);
    };
    INFO(c.name << " " << shape_str(s));
    CHECK(finite_diff_check(f, x) < 1e-4);
    ++trials;
  }
  CHECK(trials == 100);
}

TEST_CASE("temporal_conv gradient") {
  Rng rng(6);
  const Tensor x = random_tensor({4, 2, 3}, rng), w = random_tensor({6, 3}, rng), b = random_tensor({3}, rng);
  auto fx = [&](Var v) {
    Rng local(9);
    Graph& g = v.graph();
    return weighted(ops::temporal_conv(v, g.constant(w), g.constant(b), 2), local);
  };
  auto fw = [&](Var v) {
    Rng local(9);
    Graph& g = v.graph();
    return weighted(ops::temporal_conv(g.constant(x), v, g.constant(b), 2), local);
  };
  CHECK(finite_diff_check(fx, x) < 1e-4);
  CHECK(finite_diff_check(fw, w) < 1e-4);
}

TEST_CASE("disabled gradients keep no closures") {
  Graph g;
  g.set_grad_enabled(false);
  Var x = g.variable(Tensor({2}, {1, 2}));
  Var y = ops::mul(x, x);
  CHECK_FALSE(g.requires_grad(y));
}

TEST_CASE("rng streams are reproducible and independent of order") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  CHECK(Rng::derive(7, {1, 2}) == Rng::derive(7, {1, 2}));
  CHECK(Rng::derive(7, {1, 2}) != Rng::derive(7, {2, 1}));
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v > 0.0 && v < 1.0));
    CHECK(u.below(5) < 5);
  }
}
