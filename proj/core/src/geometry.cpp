// SPDX-License-Identifier: Apache-2.0
#include "hacm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hacm/error.hpp"
#include "hacm/ops.hpp"

namespace hacm::geometry {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_same(const BallPoint& u, const BallPoint& v, const char* op) {
  if (!(u.curvature() == v.curvature())) {
    throw DomainError(std::string(op) + ": curvature mismatch (" + std::to_string(u.curvature().c()) + " vs " +
                      std::to_string(v.curvature().c()) + ")");
  }
  if (u.dim() != v.dim()) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(u.dim()) + " vs " +
                     std::to_string(v.dim()));
  }
}

constexpr double kMaxTanh = 1.0 - 1e-15;

// tanh(a)/a and s^2 * g'(a)/a, with Taylor forms near 0.
struct ExpFactors {
  double g;
  double coef;
};

ExpFactors exp_factors(double a, double kappa) {
  if (a < 1e-4) {
    const double a2 = a * a;
    return {1.0 - a2 / 3.0 + 2.0 * a2 * a2 / 15.0, kappa * (-2.0 / 3.0 + 8.0 * a2 / 15.0)};
  }
  const double t = std::tanh(a);
  const double sech2 = 1.0 - t * t;
  const double gprime = (a * sech2 - t) / (a * a);
  return {t / a, kappa * gprime / a};
}

}  // namespace

Curvature::Curvature(double c) : c_(c), sqrt_kappa_(std::sqrt(-c)) {
  if (!std::isfinite(c) || !(c < 0.0)) {
    throw DomainError("curvature: c must be finite and negative, got " + std::to_string(c));
  }
}

BallPoint::BallPoint(std::vector<double> coords, Curvature c) : coords_(std::move(coords)), curv_(c) {
  double sq = 0.0;
  for (double x : coords_) {
    if (!std::isfinite(x)) throw DomainError("ball point: non-finite coordinate");
    sq += x * x;
  }
  if (!(sq * curv_.kappa() < 1.0)) {
    throw DomainError("ball point: squared norm " + std::to_string(sq) + " not below " +
                      std::to_string(1.0 / curv_.kappa()));
  }
}

double BallPoint::norm() const { return std::sqrt(dot(coords_, coords_)); }

BallPoint BallPoint::operator-() const {
  std::vector<double> neg(coords_.size());
  std::transform(coords_.begin(), coords_.end(), neg.begin(), [](double x) { return -x; });
  return BallPoint(std::move(neg), curv_);
}

BallPoint mobius_add(const BallPoint& u, const BallPoint& v, MobiusMode mode) {
  require_same(u, v, "mobius_add");
  // The literal form substitutes the signed c where gyro-addition uses |c|.
  const double k = mode == MobiusMode::gyro ? u.curvature().kappa() : u.curvature().c();
  const double uv = dot(u.coords(), v.coords());
  const double uu = dot(u.coords(), u.coords());
  const double vv = dot(v.coords(), v.coords());
  const double a = 1.0 + 2.0 * k * uv + k * vv;
  const double b = 1.0 - k * uu;
  const double d = 1.0 + 2.0 * k * uv + k * k * uu * vv;
  std::vector<double> out(u.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (a * u[i] + b * v[i]) / d;
  if (mode == MobiusMode::as_written) {
    double sq = 0.0;
    for (double x : out) sq += x * x;
    if (!(sq * u.curvature().kappa() < 1.0) || !std::isfinite(sq)) {
      throw DomainError("mobius_add (as-written mode): result with norm " + std::to_string(std::sqrt(sq)) +
                        " escapes the ball of radius " + std::to_string(u.curvature().radius()));
    }
  }
  return BallPoint(std::move(out), u.curvature());
}

double distance(std::span<const double> u, std::span<const double> v, const Curvature& c) {
  if (std::equal(u.begin(), u.end(), v.begin(), v.end())) return 0.0;
  // |(-u) (+) v| without materialising the sum.
  const double k = c.kappa();
  const double uv = -dot(u, v);
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  const double a = 1.0 + 2.0 * k * uv + k * vv;
  const double b = 1.0 - k * uu;
  const double d = 1.0 + 2.0 * k * uv + k * k * uu * vv;
  double sq = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double w = (b * v[i] - a * u[i]) / d;
    sq += w * w;
  }
  // Gyro-addition is closed on the ball; only rounding can push this past 1.
  const double arg = std::min(c.sqrt_kappa() * std::sqrt(sq), 1.0);
  return 2.0 / c.sqrt_kappa() * ops::atanh_clamped(arg);
}

double poincare_distance(const BallPoint& u, const BallPoint& v) {
  require_same(u, v, "poincare_distance");
  return distance(u.coords(), v.coords(), u.curvature());
}

void exp_map_origin(std::span<const double> x, const Curvature& c, std::span<double> out) {
  const double n = std::sqrt(dot(x, x));
  if (!std::isfinite(n)) throw DomainError("exp_map_origin: non-finite input");
  // Removable singularity; the backward pass still uses the limit slope.
  double g = n < 1e-12 ? 0.0 : exp_factors(c.sqrt_kappa() * n, c.kappa()).g;
  // tanh rounds to 1 beyond a ~ 19, which would put the point on the boundary.
  const double a = c.sqrt_kappa() * n;
  if (g * a > kMaxTanh) g = kMaxTanh / a;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = g * x[i];
}

void ball_project(std::span<const double> h, const Curvature& c, std::span<double> out) {
  const double sq = dot(h, h);
  if (!std::isfinite(sq)) throw DomainError("ball_project: non-finite input");
  const double q = 1.0 + sq / c.kappa();
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] / q;
}

BallPoint exp_map_origin(std::span<const double> x, Curvature c) {
  std::vector<double> out(x.size());
  exp_map_origin(x, c, out);
  return BallPoint(std::move(out), c);
}

BallPoint ball_project(std::span<const double> h, Curvature c) {
  std::vector<double> out(h.size());
  ball_project(h, c, out);
  return BallPoint(std::move(out), c);
}

double hyperbolic_similarity(const BallPoint& u, const BallPoint& v) {
  return 1.0 - std::cosh(poincare_distance(u, v));
}

Var exp_map_origin(Var x, const Curvature& c) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  Tensor out(xv.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const double> xr(xv.data() + r * n, n);
    norms[r] = std::sqrt(dot(xr, xr));
    exp_map_origin(xr, c, std::span<double>(out.data() + r * n, n));
  }
  return x.graph().record("exp_map_origin", std::move(out), {x}, [n, rows, norms, c](const BackwardArgs& ga) {
    const Tensor& xv = *ga.in[0];
    Tensor& dx = *ga.din[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const ExpFactors f = exp_factors(c.sqrt_kappa() * norms[r], c.kappa());
      const double* xr = xv.data() + r * n;
      const double* dy = ga.dout.data() + r * n;
      double xdy = 0.0;
      for (std::size_t j = 0; j < n; ++j) xdy += xr[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += f.g * dy[j] + f.coef * xdy * xr[j];
    }
  });
}

Var ball_project(Var h, const Curvature& c) {
  const Tensor& hv = h.value();
  const std::size_t n = hv.cols(), rows = hv.rows();
  Tensor out(hv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    ball_project(std::span<const double>(hv.data() + r * n, n), c, std::span<double>(out.data() + r * n, n));
  }
  const double kappa = c.kappa();
  return h.graph().record("ball_project", std::move(out), {h}, [n, rows, kappa](const BackwardArgs& ga) {
    const Tensor& hv = *ga.in[0];
    Tensor& dh = *ga.din[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* hr = hv.data() + r * n;
      const double* dy = ga.dout.data() + r * n;
      double sq = 0.0, hdy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sq += hr[j] * hr[j];
        hdy += hr[j] * dy[j];
      }
      const double q = 1.0 + sq / kappa;
      const double f = 2.0 * hdy / (kappa * q * q);
      for (std::size_t j = 0; j < n; ++j) dh[r * n + j] += dy[j] / q - f * hr[j];
    }
  });
}

Var to_ball(Var x, const Curvature& c) { return ball_project(exp_map_origin(x, c), c); }

}  // namespace hacm::geometry
