// SPDX-License-Identifier: Apache-2.0
#include "hacm/network.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hacm/error.hpp"
#include "hacm/ops.hpp"

namespace hacm::network {
namespace {

Parameter uniform_weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool trainable = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return Parameter(name, std::move(w), trainable, trainable);
}

Parameter zeros(const std::string& name, std::size_t n) { return Parameter(name, Tensor({n})); }

LayerNormParams init_norm(const std::string& name, std::size_t c) {
  return {Parameter(name + ".gamma", Tensor({c}, 1.0)), Parameter(name + ".beta", Tensor({c}))};
}

BlockParams init_block(const std::string& name, std::size_t c, std::size_t hidden, Rng& rng) {
  BlockParams b;
  b.ln1 = init_norm(name + ".ln1", c);
  b.wq = uniform_weight(name + ".attn.wq", c, c, rng);
  b.wk = uniform_weight(name + ".attn.wk", c, c, rng);
  b.wv = uniform_weight(name + ".attn.wv", c, c, rng);
  b.wo = uniform_weight(name + ".attn.wo", c, c, rng);
  b.bo = zeros(name + ".attn.bo", c);
  b.ln2 = init_norm(name + ".ln2", c);
  b.w1 = uniform_weight(name + ".ffn.w1", c, hidden, rng);
  b.b1 = zeros(name + ".ffn.b1", hidden);
  b.w2 = uniform_weight(name + ".ffn.w2", hidden, c, rng);
  b.b2 = zeros(name + ".ffn.b2", c);
  return b;
}

template <class P, class Params>
std::vector<P*> collect(Params& m) {
  std::vector<P*> out{&m.refine.conv_weight, &m.refine.conv_bias, &m.refine.positional.spatial,
                      &m.refine.positional.temporal};
  auto block = [&out](auto& b) {
    for (P* p : {&b.ln1.gamma, &b.ln1.beta, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2.gamma, &b.ln2.beta, &b.w1,
                 &b.b1, &b.w2, &b.b2})
      out.push_back(p);
  };
  for (auto& b : m.encoder) block(b);
  out.push_back(&m.encoder_norm.gamma);
  out.push_back(&m.encoder_norm.beta);
  for (auto& b : m.decoder) block(b);
  out.push_back(&m.decoder_norm.gamma);
  out.push_back(&m.decoder_norm.beta);
  for (P* p : {&m.mask_token, &m.head_weight, &m.head_bias, &m.gcm_psi, &m.gcm_phi}) out.push_back(p);
  return out;
}

Var linear(Var x, Parameter& w, Parameter& b) {
  Graph& g = x.graph();
  return ops::add(ops::matmul(x, g.param(w)), g.param(b));
}

Var run_blocks(Var x, std::vector<BlockParams>& blocks, LayerNormParams& norm, std::size_t heads) {
  for (BlockParams& b : blocks) x = block_forward(x, b, heads);
  return layer_norm(x, norm);
}

}  // namespace

void ModelShape::validate() const {
  const std::size_t c = refine.embed_dim;
  if (c == 0 || heads == 0 || c % heads != 0) {
    throw ConfigError("model: heads (" + std::to_string(heads) + ") must divide embed_dim (" + std::to_string(c) + ")");
  }
  if (hidden == 0) throw ConfigError("model: hidden width must be positive");
  if (refine.pool_r == 0 || refine.frames % refine.pool_r != 0) {
    throw ConfigError("model: pool_r " + std::to_string(refine.pool_r) + " does not divide frames " +
                      std::to_string(refine.frames));
  }
  if ((refine.frames / refine.pool_r) % 2 != 0) {
    throw ConfigError("model: frames / pool_r must be even for cross grouping");
  }
  if (refine.joints == 0) throw ConfigError("model: no joints left after pruning");
}

std::vector<Parameter*> ModelParams::parameters() { return collect<Parameter>(*this); }
std::vector<const Parameter*> ModelParams::parameters() const { return collect<const Parameter>(*this); }

std::vector<Parameter*> ModelParams::trainable() {
  std::vector<Parameter*> all = parameters();
  std::erase_if(all, [](const Parameter* p) { return !p->trainable; });
  return all;
}

ModelParams init_model(const ModelShape& shape, Rng& rng) {
  shape.validate();
  const std::size_t c = shape.embed_dim();
  ModelParams m;
  m.refine = refine::init_refine(shape.refine, rng);
  for (std::size_t i = 0; i < shape.encoder_layers; ++i)
    m.encoder.push_back(init_block("encoder." + std::to_string(i), c, shape.hidden, rng));
  m.encoder_norm = init_norm("encoder.norm", c);
  for (std::size_t i = 0; i < shape.decoder_layers; ++i)
    m.decoder.push_back(init_block("decoder." + std::to_string(i), c, shape.hidden, rng));
  m.decoder_norm = init_norm("decoder.norm", c);
  Tensor mt({1, c});
  for (double& v : mt.values()) v = rng.uniform(-0.02, 0.02);
  m.mask_token = Parameter("mask_token", std::move(mt));
  m.head_weight = uniform_weight("head.weight", c, shape.out_dim(), rng);
  m.head_bias = zeros("head.bias", shape.out_dim());
  m.gcm_psi = uniform_weight("gcm.psi", c, c, rng, false);
  m.gcm_phi = uniform_weight("gcm.phi", c, c, rng, false);
  return m;
}

Var layer_norm(Var x, LayerNormParams& p) {
  Graph& g = x.graph();
  return ops::add(ops::mul(ops::layer_norm(x), g.param(p.gamma)), g.param(p.beta));
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
  const Shape& s = q.shape();
  if (s.size() != 2 || k.shape() != s || v.shape() != s) {
    throw ShapeError("attention: q/k/v must share one [n x C] shape, got " + shape_str(s) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t n = s[0], c = s[1];
  if (heads == 0 || c % heads != 0) throw ShapeError("attention: heads do not divide " + std::to_string(c));
  const std::size_t dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Head slices are copied into contiguous [n x dh] buffers.
  auto take = [n, c, dh](const Tensor& t, std::size_t h, std::vector<double>& buf) {
    buf.resize(n * dh);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(t.data() + i * c + h * dh, dh, buf.data() + i * dh);
  };
  auto put = [n, c, dh](const std::vector<double>& buf, std::size_t h, Tensor& t) {
    for (std::size_t i = 0; i < n; ++i) {
      double* row = t.data() + i * c + h * dh;
      for (std::size_t j = 0; j < dh; ++j) row[j] += buf[i * dh + j];
    }
  };

  auto probs = std::make_shared<std::vector<double>>(heads * n * n, 0.0);
  Tensor out({n, c});
  std::vector<double> qh, kh, vh, oh;
  for (std::size_t h = 0; h < heads; ++h) {
    take(q.value(), h, qh);
    take(k.value(), h, kh);
    take(v.value(), h, vh);
    double* a = probs->data() + h * n * n;
    kernels::gemm_nt(n, dh, n, qh.data(), kh.data(), a);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = a + i * n;
      double m = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) m = std::max(m, row[j] *= scale);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (row[j] = std::exp(row[j] - m));
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
    }
    oh.assign(n * dh, 0.0);
    kernels::gemm_nn(n, n, dh, a, vh.data(), oh.data());
    put(oh, h, out);
  }

  return q.graph().record(
      "attention", std::move(out), {q, k, v}, [=](const BackwardArgs& g) {
        std::vector<double> qh, kh, vh, doh, da(n * n), tmp;
        for (std::size_t h = 0; h < heads; ++h) {
          const double* a = probs->data() + h * n * n;
          take(*g.in[0], h, qh);
          take(*g.in[1], h, kh);
          take(*g.in[2], h, vh);
          take(g.dout, h, doh);
          if (g.din[2]) {
            tmp.assign(n * dh, 0.0);
            kernels::gemm_tn(n, n, dh, a, doh.data(), tmp.data());
            put(tmp, h, *g.din[2]);
          }
          if (!g.din[0] && !g.din[1]) continue;
          std::fill(da.begin(), da.end(), 0.0);
          kernels::gemm_nt(n, dh, n, doh.data(), vh.data(), da.data());
          // Softmax backward folded with the score scale.
          for (std::size_t i = 0; i < n; ++i) {
            const double* ar = a + i * n;
            double* dr = da.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += ar[j] * dr[j];
            for (std::size_t j = 0; j < n; ++j) dr[j] = ar[j] * (dr[j] - dot) * scale;
          }
          if (g.din[0]) {
            tmp.assign(n * dh, 0.0);
            kernels::gemm_nn(n, n, dh, da.data(), kh.data(), tmp.data());
            put(tmp, h, *g.din[0]);
          }
          if (g.din[1]) {
            tmp.assign(n * dh, 0.0);
            kernels::gemm_tn(n, n, dh, da.data(), qh.data(), tmp.data());
            put(tmp, h, *g.din[1]);
          }
        }
      });
}

Var block_forward(Var x, BlockParams& p, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[1] != p.wq.value.dim(0)) {
    throw ShapeError("transformer block: input " + shape_str(s) + " does not match width " +
                     std::to_string(p.wq.value.dim(0)));
  }
  Graph& g = x.graph();
  Var h = layer_norm(x, p.ln1);
  Var att = multi_head_attention(ops::matmul(h, g.param(p.wq)), ops::matmul(h, g.param(p.wk)),
                                 ops::matmul(h, g.param(p.wv)), heads);
  x = ops::add(x, linear(att, p.wo, p.bo));
  Var f = linear(ops::gelu(linear(layer_norm(x, p.ln2), p.w1, p.b1)), p.w2, p.b2);
  return ops::add(x, f);
}

Var encoder_forward(Var e_um, ModelParams& p, std::size_t heads) {
  if (e_um.shape().size() != 2 || e_um.shape()[0] == 0) {
    throw ShapeError("encoder: expected a non-empty [2M x C] input, got " + shape_str(e_um.shape()));
  }
  return run_blocks(e_um, p.encoder, p.encoder_norm, heads);
}

Var insert_mask_tokens(Var e_e, const masking::MaskPlan& plan, Var mask_token) {
  const Shape& s = e_e.shape();
  const std::size_t rows = 2 * plan.l;
  if (s.size() != 2 || s[0] != plan.combined.size()) {
    throw ShapeError("insert_mask_tokens: " + shape_str(s) + " does not hold " + std::to_string(plan.combined.size()) +
                     " encoded rows");
  }
  if (mask_token.shape() != Shape{1, s[1]}) {
    throw ShapeError("insert_mask_tokens: mask token " + shape_str(mask_token.shape()) + " vs width " +
                     std::to_string(s[1]));
  }
  for (std::size_t i : plan.combined)
    if (i >= rows) throw DomainError("insert_mask_tokens: index " + std::to_string(i) + " out of range");
  Var placed = ops::scatter_rows(e_e, plan.combined, rows);
  if (plan.masked.empty()) return placed;
  std::vector<std::size_t> zeros(plan.masked.size(), 0);
  Var fill = ops::gather_rows(mask_token, zeros);
  return ops::add(placed, ops::scatter_rows(fill, plan.masked, rows));
}

DecoderPositions decoder_positions(std::size_t pooled_frames, std::size_t joints, bool within_half) {
  DecoderPositions pos;
  for (masking::Parity p : {masking::Parity::odd, masking::Parity::even}) {
    const std::vector<std::size_t> frames = masking::half_frames(pooled_frames, p);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      for (std::size_t j = 0; j < joints; ++j) {
        pos.frame.push_back(within_half ? k : frames[k]);
        pos.joint.push_back(j);
      }
    }
  }
  return pos;
}

Var decoder_forward(Var e_d, Var spatial, Var temporal, const DecoderPositions& pos, ModelParams& p,
                    std::size_t heads) {
  const Shape& s = e_d.shape();
  if (s.size() != 2 || s[0] != pos.frame.size()) {
    throw ShapeError("decoder: input " + shape_str(s) + " does not match " + std::to_string(pos.frame.size()) +
                     " positions");
  }
  const Shape& ps = spatial.shape();
  const Shape& pt = temporal.shape();
  if (ps.size() != 3 || pt.size() != 3 || ps[2] != s[1] || pt[2] != s[1]) {
    throw ShapeError("decoder: positional tables " + shape_str(ps) + ", " + shape_str(pt) + " vs width " +
                     std::to_string(s[1]));
  }
  Var ps_rows = ops::gather_rows(ops::reshape(spatial, {ps[1], ps[2]}), pos.joint);
  Var pt_rows = ops::gather_rows(ops::reshape(temporal, {pt[0], pt[2]}), pos.frame);
  Var d0 = ops::add(ops::add(e_d, ps_rows), pt_rows);
  return run_blocks(d0, p.decoder, p.decoder_norm, heads);
}

Var predict(Var d_d, Var weight, Var bias) {
  const Shape& s = d_d.shape();
  const Shape& w = weight.shape();
  if (s.size() != 2 || w.size() != 2 || w[0] != s[1] || bias.shape() != Shape{w[1]}) {
    throw ShapeError("predict: head " + shape_str(w) + " / " + shape_str(bias.shape()) + " does not fit input " +
                     shape_str(s));
  }
  return ops::add(ops::matmul(d_d, weight), bias);
}

}  // namespace hacm::network
