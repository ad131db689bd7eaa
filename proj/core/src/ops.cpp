// SPDX-License-Identifier: Apache-2.0
#include "hacm/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hacm/error.hpp"

namespace hacm::kernels {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  // Four rows of b per pass over c; each c[i][j] still accumulates in p order.
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) ci[j] = (((ci[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
  // Dot-product form does not vectorise under strict FP; transpose b and
  // accumulate row-wise instead.
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, k, n, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict d, double* __restrict c) {
  // Four rows of a/d per pass over c, accumulating in i order.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* d0 = d + i * n;
    const double* d1 = d0 + n;
    const double* d2 = d1 + n;
    const double* d3 = d2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] = (((cp[j] + v0 * d0[j]) + v1 * d1[j]) + v2 * d2[j]) + v3 * d3[j];
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    const double* di = d + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * di[j];
    }
  }
}

}  // namespace hacm::kernels

namespace hacm::ops {
namespace {

std::atomic<std::size_t> g_atanh_clamps{0};

constexpr double kAtanhLimit = 1.0 - 1e-12;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

Graph& same_graph(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    shape_fail(op, "operands belong to different graphs");
  }
  return a.graph();
}

// Right-aligned broadcast of two shapes; strides are zero on broadcast axes.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
  bool same = false;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1) {
      p.out[d] = pa[d];
    } else if (pa[d] == 1) {
      p.out[d] = pb[d];
    } else {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t d = r; d-- > 0;) {
    p.sa[d] = (pa[d] == 1) ? 0 : stride_a;
    p.sb[d] = (pb[d] == 1) ? 0 : stride_b;
    stride_a *= pa[d];
    stride_b *= pb[d];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element in order.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t total = shape_size(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  if (total == 0) return;
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1];
  const std::size_t sa_in = p.sa[r - 1], sb_in = p.sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(o + j, oa + j * sa_in, ob + j * sb_in);
    // Advance the odometer over the outer axes.
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * idx[d];
      ob -= p.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class Bwd>
Var unary(const char* op, Var a, Fwd fwd, Bwd dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return a.graph().record(op, std::move(y), {a}, [dfdx](const BackwardArgs& g) {
    const Tensor& x = *g.in[0];
    Tensor& dx = *g.din[0];
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g.dout[i] * dfdx(x[i], g.out[i]);
  });
}

}  // namespace

std::size_t atanh_clamp_count() { return g_atanh_clamps.load(); }

double atanh_clamped(double x) {
  if (!(std::abs(x) <= 1.0)) {
    throw DomainError("atanh: input " + std::to_string(x) + " outside [-1, 1]");
  }
  if (std::abs(x) > kAtanhLimit) {
    ++g_atanh_clamps;
    x = std::copysign(kAtanhLimit, x);
  }
  return std::atanh(x);
}

Var add(Var a, Var b) {
  Graph& g = same_graph("add", a, b);
  const BroadcastPlan plan = plan_broadcast("add", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(plan.out);
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] + y[j]; });
  return g.record("add", std::move(out), {a, b}, [plan](const BackwardArgs& ga) {
    Tensor* da = ga.din[0];
    Tensor* db = ga.din[1];
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (da) (*da)[i] += ga.dout[o];
      if (db) (*db)[j] += ga.dout[o];
    });
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph("sub", a, b);
  const BroadcastPlan plan = plan_broadcast("sub", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(plan.out);
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] - y[j]; });
  return g.record("sub", std::move(out), {a, b}, [plan](const BackwardArgs& ga) {
    Tensor* da = ga.din[0];
    Tensor* db = ga.din[1];
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (da) (*da)[i] += ga.dout[o];
      if (db) (*db)[j] -= ga.dout[o];
    });
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph("mul", a, b);
  const BroadcastPlan plan = plan_broadcast("mul", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(plan.out);
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] * y[j]; });
  return g.record("mul", std::move(out), {a, b}, [plan](const BackwardArgs& ga) {
    const Tensor& x = *ga.in[0];
    const Tensor& y = *ga.in[1];
    Tensor* da = ga.din[0];
    Tensor* db = ga.din[1];
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (da) (*da)[i] += ga.dout[o] * y[j];
      if (db) (*db)[j] += ga.dout[o] * x[i];
    });
  });
}

Var scale(Var a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    shape_fail("matmul", "shape mismatch " + shape_str(x.shape()) + " . " + shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(m, k, n, x.data(), y.data(), out.data());
  return g.record("matmul", std::move(out), {a, b}, [m, k, n](const BackwardArgs& ga) {
    if (Tensor* da = ga.din[0]) kernels::gemm_nt(m, n, k, ga.dout.data(), ga.in[1]->data(), da->data());
    if (Tensor* db = ga.din[1]) kernels::gemm_tn(m, k, n, ga.in[0]->data(), ga.dout.data(), db->data());
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) shape_fail("transpose", "expected a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return a.graph().record("transpose", std::move(out), {a}, [m, n](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += ga.dout[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record("reshape", std::move(out), {a}, [](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ga.dout[i];
  });
}

namespace {

// outer x extent x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  Graph& g = parts[0].graph();
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail("concat", "axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    if (&p.graph() != &g) shape_fail("concat", "operands belong to different graphs");
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", "rank mismatch " + shape_str(s) + " vs " + shape_str(first));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        shape_fail("concat", "shape mismatch " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit so = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    const std::size_t chunk = extents[k] * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(x.data() + o * chunk, chunk, out.data() + o * so.extent * so.inner + offset * so.inner);
    }
    offset += extents[k];
  }
  return g.record("concat", std::move(out), parts, [so, extents](const BackwardArgs& ga) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t chunk = extents[k] * so.inner;
      if (Tensor* dx = ga.din[k]) {
        for (std::size_t o = 0; o < so.outer; ++o) {
          const double* src = ga.dout.data() + o * so.extent * so.inner + offset * so.inner;
          double* dst = dx->data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += extents[k];
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") out of bounds on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisSplit si = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const Tensor& x = a.value();
  const std::size_t chunk = length * si.inner;
  for (std::size_t o = 0; o < si.outer; ++o) {
    std::copy_n(x.data() + (o * si.extent + start) * si.inner, chunk, out.data() + o * chunk);
  }
  return a.graph().record("slice", std::move(out), {a}, [si, start, chunk](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t o = 0; o < si.outer; ++o) {
      double* dst = dx.data() + (o * si.extent + start) * si.inner;
      const double* src = ga.dout.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_fail("gather_rows", "scalar operand");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows == 0 ? 0 : x.size() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  Tensor out(out_shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) {
      shape_fail("gather_rows", "index " + std::to_string(index[r]) + " out of range for " +
                                    std::to_string(rows) + " rows");
    }
    std::copy_n(x.data() + index[r] * width, width, out.data() + r * width);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.graph().record("gather_rows", std::move(out), {a}, [idx, width](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = dx.data() + idx[r] * width;
      const double* src = ga.dout.data() + r * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
}

Var scatter_rows(Var a, std::span<const std::size_t> index, std::size_t rows) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.dim(0) != index.size()) {
    shape_fail("scatter_rows", "operand " + shape_str(x.shape()) + " does not match " +
                                   std::to_string(index.size()) + " indices");
  }
  const std::size_t width = index.empty() ? (x.rank() > 0 && x.dim(0) ? x.size() / x.dim(0) : 0)
                                          : x.size() / index.size();
  Shape out_shape = x.shape();
  out_shape[0] = rows;
  Tensor out(out_shape);
  std::vector<bool> seen(rows, false);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) {
      shape_fail("scatter_rows", "index " + std::to_string(index[r]) + " out of range for " +
                                     std::to_string(rows) + " rows");
    }
    if (seen[index[r]]) shape_fail("scatter_rows", "duplicate index " + std::to_string(index[r]));
    seen[index[r]] = true;
    std::copy_n(x.data() + r * width, width, out.data() + index[r] * width);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.graph().record("scatter_rows", std::move(out), {a}, [idx, width](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* src = ga.dout.data() + idx[r] * width;
      double* dst = dx.data() + r * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), rows = x.rows();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = out.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  return a.graph().record("softmax", std::move(out), {a}, [n, rows](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ga.out.data() + r * n;
      const double* dy = ga.dout.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      double* d = dx.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += y[j] * (dy[j] - dot);
    }
  });
}

Var layer_norm(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), rows = x.rows();
  if (n == 0) shape_fail("layer_norm", "empty last axis");
  Tensor out(x.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    double* yr = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * rstd[r];
  }
  return a.graph().record("layer_norm", std::move(out), {a}, [n, rows, rstd](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ga.out.data() + r * n;
      const double* dy = ga.dout.data() + r * n;
      double mdy = 0.0, mdyy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mdy += dy[j];
        mdyy += dy[j] * y[j];
      }
      mdy *= inv_n;
      mdyy *= inv_n;
      double* d = dx.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += rstd[r] * (dy[j] - mdy - y[j] * mdyy);
    }
  });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var atanh(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  std::vector<bool> clamped(x.size(), false);
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    if (!(std::abs(v) <= 1.0)) {
      throw DomainError("atanh: input " + std::to_string(v) + " outside [-1, 1]");
    }
    if (std::abs(v) > kAtanhLimit) {
      v = std::copysign(kAtanhLimit, v);
      clamped[i] = true;
      ++count;
    }
    out[i] = std::atanh(v);
  }
  if (count) g_atanh_clamps += count;
  return a.graph().record("atanh", std::move(out), {a}, [clamped](const BackwardArgs& ga) {
    const Tensor& x = *ga.in[0];
    Tensor& dx = *ga.din[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!clamped[i]) dx[i] += ga.dout[i] / (1.0 - x[i] * x[i]);
    }
  });
}

Var cosh(Var a) {
  return unary(
      "cosh", a, [](double x) { return std::cosh(x); }, [](double x, double) { return std::sinh(x); });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  for (double v : a.value().values()) {
    if (!(v >= 0.0)) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var norm(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_fail("norm", "scalar operand");
  const std::size_t n = x.cols(), rows = x.rows();
  Shape out_shape = x.shape();
  out_shape.back() = 1;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    out[r] = std::sqrt(s);
  }
  return a.graph().record("norm", std::move(out), {a}, [n, rows](const BackwardArgs& ga) {
    const Tensor& x = *ga.in[0];
    Tensor& dx = *ga.din[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double nr = ga.out[r];
      if (nr == 0.0) continue;  // subgradient 0 at the origin
      const double f = ga.dout[r] / nr;
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += f * x[r * n + j];
    }
  });
}

Var l2_normalize(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), rows = x.rows();
  Tensor out(x.shape());
  std::vector<double> denom(rows);
  std::vector<bool> floored(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    const double nr = std::sqrt(s);
    floored[r] = nr <= eps;
    denom[r] = floored[r] ? eps : nr;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / denom[r];
  }
  return a.graph().record("l2_normalize", std::move(out), {a},
                          [n, rows, denom, floored](const BackwardArgs& ga) {
                            Tensor& dx = *ga.din[0];
                            for (std::size_t r = 0; r < rows; ++r) {
                              const double* y = ga.out.data() + r * n;
                              const double* dy = ga.dout.data() + r * n;
                              double dot = 0.0;
                              if (!floored[r]) {
                                for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
                              }
                              for (std::size_t j = 0; j < n; ++j) {
                                dx[r * n + j] += (dy[j] - y[j] * dot) / denom[r];
                              }
                            }
                          });
}

Var temporal_conv(Var x, Var w, Var b, std::size_t stride) {
  Graph& g = same_graph("temporal_conv", x, w);
  same_graph("temporal_conv", x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 3) shape_fail("temporal_conv", "input must be [L x J x C], got " + shape_str(xv.shape()));
  const std::size_t frames = xv.dim(0), joints = xv.dim(1), cin = xv.dim(2);
  if (stride == 0 || frames % stride != 0) {
    shape_fail("temporal_conv", "stride " + std::to_string(stride) + " does not divide " +
                                    std::to_string(frames) + " frames");
  }
  const std::size_t patch = stride * cin;
  if (wv.rank() != 2 || wv.dim(0) != patch) {
    shape_fail("temporal_conv", "kernel " + shape_str(wv.shape()) + " does not match patch width " +
                                    std::to_string(patch));
  }
  const std::size_t cout = wv.dim(1);
  if (bv.size() != cout) shape_fail("temporal_conv", "bias " + shape_str(bv.shape()) + " vs " + std::to_string(cout) + " outputs");
  const std::size_t pooled = frames / stride;
  const std::size_t tokens = pooled * joints;

  // im2col: token (t, j) gathers frames t*stride .. t*stride+stride-1.
  Tensor patches({tokens, patch});
  for (std::size_t t = 0; t < pooled; ++t)
    for (std::size_t j = 0; j < joints; ++j)
      for (std::size_t s = 0; s < stride; ++s)
        for (std::size_t c = 0; c < cin; ++c)
          patches[(t * joints + j) * patch + s * cin + c] = xv.at(t * stride + s, j, c);

  Tensor out({pooled, joints, cout});
  for (std::size_t k = 0; k < tokens; ++k)
    for (std::size_t o = 0; o < cout; ++o) out[k * cout + o] = bv[o];
  kernels::gemm_nn(tokens, patch, cout, patches.data(), wv.data(), out.data());

  return g.record("temporal_conv", std::move(out), {x, w, b},
                  [patches, pooled, joints, cin, stride, patch, cout, tokens](const BackwardArgs& ga) {
                    if (Tensor* dw = ga.din[1]) {
                      kernels::gemm_tn(tokens, patch, cout, patches.data(), ga.dout.data(), dw->data());
                    }
                    if (Tensor* db = ga.din[2]) {
                      for (std::size_t k = 0; k < tokens; ++k)
                        for (std::size_t o = 0; o < cout; ++o) (*db)[o] += ga.dout[k * cout + o];
                    }
                    if (Tensor* dx = ga.din[0]) {
                      Tensor dp({tokens, patch});
                      kernels::gemm_nt(tokens, cout, patch, ga.dout.data(), ga.in[1]->data(), dp.data());
                      for (std::size_t t = 0; t < pooled; ++t)
                        for (std::size_t j = 0; j < joints; ++j)
                          for (std::size_t s = 0; s < stride; ++s)
                            for (std::size_t c = 0; c < cin; ++c)
                              dx->at(t * stride + s, j, c) += dp[(t * joints + j) * patch + s * cin + c];
                    }
                  });
}

Var mean(Var a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_fail("mean", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  if (s[axis] == 0) shape_fail("mean", "empty axis in " + shape_str(s));
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = 1;
  Tensor out(out_shape);
  const Tensor& x = a.value();
  const double inv = 1.0 / static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const double* src = x.data() + (o * sp.extent + e) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] *= inv;
  }
  return a.graph().record("mean", std::move(out), {a}, [sp, inv](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          dx[(o * sp.extent + e) * sp.inner + i] += ga.dout[o * sp.inner + i] * inv;
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a}, [](const BackwardArgs& ga) {
    Tensor& dx = *ga.din[0];
    const double d = ga.dout[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
  });
}

Var mean_all(Var a) {
  const std::size_t n = a.size();
  if (n == 0) shape_fail("mean_all", "empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

}  // namespace hacm::ops
