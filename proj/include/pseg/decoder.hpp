#pragma once

#include "pseg/adapter.hpp"
#include "pseg/hyper_prompt.hpp"

namespace pseg {

/// Token stream (output token at index 0, then prompt tokens) and image
/// tokens, both batched over depth slices.
struct DecoderState {
  Tensor tokens;    // [D, T, L]
  Tensor image;     // [D, N, L]
  Tensor e_prompt;  // [N_p, L], the raw encoded prompt stack
};

struct DecoderBlockParams {
  AttentionParams self_attn;
  Tensor ln1_g, ln1_b;
  AttentionParams cross_t2i;  // queries from tokens, keys/values from image
  Tensor ln2_g, ln2_b;
  MlpParams mlp;
  Tensor ln3_g, ln3_b;
  AttentionParams cross_i2t;  // queries from image, keys/values from tokens
  Tensor ln4_g, ln4_b;
};

struct DecoderAdapters {
  AdapterParams a1;  // on the token->image cross-attention output (prompt-conditioned)
  AdapterParams a2;  // parallel on the token MLP path
  AdapterParams a3;  // serial after the image-side residual
  PromptConditionParams cond;
};

/// Post-norm two-way block: token self-attention, token->image cross
/// attention, token MLP, image->token cross attention. Residual + LN after
/// each stage.
DecoderState two_way_block(const DecoderState& s, const DecoderBlockParams& p);

/// Same block with the three adapters wired in: the first (serial, with its
/// bottleneck run through prompt_condition) on the token->image output, the
/// second parallel beside the MLP scaled by cfg.scale, the third serial after
/// the image residual and before its LN.
DecoderState two_way_block_adapted(const DecoderState& s, const DecoderBlockParams& p,
                                   const DecoderAdapters& ad, const AdapterConfig& cfg);

struct MaskHeadParams {
  Tensor up1_w, up1_b;  // [L, 4*(L/2)], [L/2]
  Tensor up2_w, up2_b;  // [L/2, 4*(L/4)], [L/4]
  MlpParams token_mlp;  // L -> L/4 -> (L/4), applied to the output token
  Tensor token_mlp_w3, token_mlp_b3;
};

/// Upsamples the image tokens (two pixel-shuffle transposed convolutions with
/// GELU), maps the output token to per-pixel weights, and returns the logit
/// grid at the input resolution [D, H, W].
Tensor decode_mask_logits(const DecoderState& s, const MaskHeadParams& head,
                          const BackboneConfig& cfg);

DecoderBlockParams init_decoder_block(const BackboneConfig& cfg, Rng& rng);
MaskHeadParams init_mask_head(const BackboneConfig& cfg, Rng& rng);

std::size_t decoder_block_param_count(const BackboneConfig& cfg);
std::size_t mask_head_param_count(const BackboneConfig& cfg);

}  // namespace pseg
