// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hacm/graph.hpp"
#include "hacm/masking.hpp"
#include "hacm/refine.hpp"
#include "hacm/rng.hpp"

// Transformer encoder over unmasked tokens, mask-token decoder and the
// per-token prediction head.
namespace hacm::network {

struct LayerNormParams {
  Parameter gamma;  // [C], starts at 1
  Parameter beta;   // [C], starts at 0
};

/// One pre-norm transformer block. Q/K/V projections carry no bias.
struct BlockParams {
  LayerNormParams ln1;
  Parameter wq, wk, wv;  // [C x C]
  Parameter wo, bo;      // [C x C], [C]
  LayerNormParams ln2;
  Parameter w1, b1;  // [C x H], [H]
  Parameter w2, b2;  // [H x C], [C]
};

struct ModelShape {
  refine::RefineShape refine;
  std::size_t heads = 8;
  std::size_t hidden = 1024;
  std::size_t encoder_layers = 8;
  std::size_t decoder_layers = 3;

  std::size_t embed_dim() const { return refine.embed_dim; }
  /// 3r, the stacked-motion width predicted per token.
  std::size_t out_dim() const { return 3 * refine.pool_r; }
  /// Throws ConfigError for inconsistent sizes.
  void validate() const;
};

struct ModelParams {
  refine::RefineParams refine;
  std::vector<BlockParams> encoder;
  LayerNormParams encoder_norm;
  std::vector<BlockParams> decoder;
  LayerNormParams decoder_norm;
  Parameter mask_token;  // [1 x C]
  Parameter head_weight;  // [C x 3r]
  Parameter head_bias;    // [3r]
  // Fixed projections for the attention-based temporal criterion.
  Parameter gcm_psi, gcm_phi;  // [C x C], not trainable

  /// Every parameter in a fixed order (checkpoint and optimizer order).
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trainable();
};

/// Fan-in scaled uniform weights, zero biases, unit layer-norm gains,
/// U(-0.02, 0.02) mask token and positional tables.
ModelParams init_model(const ModelShape& shape, Rng& rng);

Var layer_norm(Var x, LayerNormParams& p);

/// Multi-head scaled dot-product self-attention on [n x C] rows, fused into
/// a single graph node. Head h uses columns [h*C/heads, (h+1)*C/heads).
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);

/// x + MSA(LN(x)), then + FFN(LN(.)) with a GELU hidden layer.
Var block_forward(Var x, BlockParams& p, std::size_t heads);

/// Encoder blocks then the final layer norm: [2M x C] -> [2M x C].
Var encoder_forward(Var e_um, ModelParams& p, std::size_t heads);

/// [2l x C]: encoded rows at plan.combined, the mask token elsewhere.
Var insert_mask_tokens(Var e_e, const masking::MaskPlan& plan, Var mask_token);

/// Positional-table rows for each canonical decoder position.
struct DecoderPositions {
  std::vector<std::size_t> frame;
  std::vector<std::size_t> joint;
};

/// Original pooled frames by default; `within_half` uses the position k
/// inside the half instead.
DecoderPositions decoder_positions(std::size_t pooled_frames, std::size_t joints, bool within_half = false);

/// D_0 = E_d + P_s + P_t, decoder blocks, final layer norm.
Var decoder_forward(Var e_d, Var spatial, Var temporal, const DecoderPositions& pos, ModelParams& p,
                    std::size_t heads);

/// Per-token affine head [n x C] -> [n x 3r].
Var predict(Var d_d, Var weight, Var bias);

}  // namespace hacm::network
