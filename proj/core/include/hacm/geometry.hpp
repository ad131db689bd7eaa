// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hacm/graph.hpp"

// Poincare-ball model of hyperbolic space with curvature c < 0. The ball is
// { v : |v|^2 < -1/c } and has radius 1/sqrt(-c).
namespace hacm::geometry {

class Curvature {
 public:
  /// Throws DomainError unless c is finite and strictly negative.
  explicit Curvature(double c);

  double c() const noexcept { return c_; }
  /// |c|, the value substituted into gyro-addition.
  double kappa() const noexcept { return -c_; }
  double sqrt_kappa() const noexcept { return sqrt_kappa_; }
  double radius() const noexcept { return 1.0 / sqrt_kappa_; }

  friend bool operator==(const Curvature&, const Curvature&) = default;

 private:
  double c_;
  double sqrt_kappa_;
};

/// A point strictly inside the ball of its curvature.
class BallPoint {
 public:
  /// Throws DomainError if `coords` is not finite or not inside the ball.
  BallPoint(std::vector<double> coords, Curvature c);

  static BallPoint origin(std::size_t dim, Curvature c) { return BallPoint(std::vector<double>(dim, 0.0), c); }

  std::span<const double> coords() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::size_t dim() const noexcept { return coords_.size(); }
  const Curvature& curvature() const noexcept { return curv_; }
  double norm() const;

  BallPoint operator-() const;

  friend bool operator==(const BallPoint&, const BallPoint&) = default;

 private:
  std::vector<double> coords_;
  Curvature curv_;
};

enum class MobiusMode {
  /// Standard gyro-addition with kappa = |c|; closed on the ball.
  gyro,
  /// The formula with the signed curvature substituted literally. Not closed
  /// on the ball; results that escape raise DomainError.
  as_written,
};

BallPoint mobius_add(const BallPoint& u, const BallPoint& v, MobiusMode mode = MobiusMode::gyro);

/// d(u, v) = (2/sqrt(-c)) atanh(sqrt(-c) |(-u) (+) v|), gyro mode.
double poincare_distance(const BallPoint& u, const BallPoint& v);

/// tanh(sqrt(-c)|x|) x / (sqrt(-c)|x|), continued analytically at x = 0.
BallPoint exp_map_origin(std::span<const double> x, Curvature c);

/// h / (1 + |h|^2 / (-c)). Inside the ball whenever h is, and for every h
/// when -c < 2; throws DomainError if the result lands outside.
BallPoint ball_project(std::span<const double> h, Curvature c);

/// 1 - cosh(d(u, v)); zero iff u == v, negative otherwise.
double hyperbolic_similarity(const BallPoint& u, const BallPoint& v);

// Allocation-free forms over raw coordinates for the masking criteria. The
// caller guarantees both points lie in the ball of `c`.
double distance(std::span<const double> u, std::span<const double> v, const Curvature& c);
void exp_map_origin(std::span<const double> x, const Curvature& c, std::span<double> out);
void ball_project(std::span<const double> h, const Curvature& c, std::span<double> out);

// Differentiable forms acting on every vector along the last axis.
Var exp_map_origin(Var x, const Curvature& c);
Var ball_project(Var h, const Curvature& c);
/// exp_map_origin followed by ball_project.
Var to_ball(Var x, const Curvature& c);

}  // namespace hacm::geometry
