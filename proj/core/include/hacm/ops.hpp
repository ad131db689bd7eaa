// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hacm/graph.hpp"

// Differentiable primitives. Every function records one node on the graph
// that owns its first operand and defines the gradient for each input.
// Shape errors name the primitive that raised them.
namespace hacm::ops {

// Elementwise binary ops broadcast numpy-style: shapes are right-aligned and
// each extent must match or be 1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// 2-D transpose.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);

/// Rows of `a` along axis 0 at the given positions (repeats allowed).
Var gather_rows(Var a, std::span<const std::size_t> index);
/// Inverse placement: output has `rows` rows, zero except row index[i] = a[i].
/// Indices must be distinct.
Var scatter_rows(Var a, std::span<const std::size_t> index, std::size_t rows);

Var softmax(Var a);                         // over the last axis
Var layer_norm(Var a, double eps = 1e-5);   // over the last axis, no affine
Var gelu(Var a);                            // exact (erf) form
Var tanh(Var a);
/// Inputs with |x| > 1 raise DomainError; inputs within 1e-12 of +-1 are
/// clamped to +-(1 - 1e-12) and counted.
Var atanh(Var a);
Var cosh(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);

/// L2 norm over the last axis; the last extent becomes 1.
Var norm(Var a);
/// Rows divided by max(norm, eps) over the last axis.
Var l2_normalize(Var a, double eps = 1e-12);

/// Strided temporal convolution with kernel = stride = `stride`:
/// x [L x J x Cin], w [stride*Cin x Cout], b [Cout] -> [L/stride x J x Cout].
/// Row s*Cin + c of `w` weighs frame offset s, channel c.
Var temporal_conv(Var x, Var w, Var b, std::size_t stride);

/// Mean over one axis, keeping it with extent 1.
Var mean(Var a, std::size_t axis);
/// Sum of all elements as a scalar.
Var sum(Var a);
/// Mean of all elements as a scalar.
Var mean_all(Var a);

/// Scalar atanh under the same clamping rule as ops::atanh.
double atanh_clamped(double x);
/// Number of atanh inputs clamped since process start.
std::size_t atanh_clamp_count();

}  // namespace hacm::ops

namespace hacm::kernels {

// Raw row-major GEMM kernels; all accumulate into C.
// C[m x n] += A[m x k] B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
// C[m x n] += A[m x k] B[n x k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
// C[k x n] += A[m x k]^T D[m x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* d, double* c);

}  // namespace hacm::kernels
