#pragma once

#include "pseg/rng.hpp"
#include "pseg/tensor.hpp"

namespace pseg {

struct BackboneConfig {
  std::size_t image_extent = 64;  // pixels per side
  std::size_t depth = 1;          // slices; 1 = 2D
  std::size_t channels = 1;
  std::size_t patch = 8;
  std::size_t embed_len = 64;  // L
  std::size_t heads = 4;       // H
  std::size_t blocks = 4;      // B
  double mlp_ratio = 4.0;

  std::size_t side_tokens() const { return image_extent / patch; }
  std::size_t tokens() const { return side_tokens() * side_tokens(); }  // N per slice
  std::size_t head_len() const { return embed_len / heads; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_len));
  }
  void validate() const;
};

/// The D x N x L embedding volume flowing through encoder blocks; D = 1 for
/// 2D inputs.
struct TokenGrid {
  Tensor values;  // [D, N, L]
  std::size_t d() const { return values.extent(0); }
  std::size_t n() const { return values.extent(1); }
  std::size_t l() const { return values.extent(2); }
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;
};

struct BlockParams {
  Tensor ln1_g, ln1_b;
  AttentionParams attn;
  Tensor ln2_g, ln2_b;
  MlpParams mlp;
};

struct PatchEmbedParams {
  Tensor weight;  // [patch*patch*channels, L]
  Tensor bias;    // [L]
  Tensor pos;     // [N, L], shared across depth slices
};

/// Linearly projects non-overlapping patches of image [D,H,W,C] (given as raw
/// voxel data) and adds the learned positional embedding.
TokenGrid patch_embed(const std::vector<double>& image, const PatchEmbedParams& p,
                      const BackboneConfig& cfg);

/// Rearranges raw voxels into the constant patch matrix [D, N, patch*patch*C].
Tensor patch_matrix(const std::vector<double>& image, const BackboneConfig& cfg);

/// softmax(Q K^T / sqrt(L/H)) V per head, heads concatenated then projected.
/// q_src supplies queries, kv_src keys/values; self-attention passes the same
/// tensor for both. Shapes [..., S, L]; leading axes are batch.
Tensor attention_mix(const Tensor& q_src, const Tensor& kv_src, const AttentionParams& p);
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p);

/// Pre-norm transformer block: x + MHA(LN(x)), then + MLP(LN(.)) with GELU.
TokenGrid vit_block(const TokenGrid& x, const BlockParams& p);

// parameter initializers (xavier-uniform weights, zero biases)
AttentionParams init_attention(std::size_t embed_len, std::size_t heads, Rng& rng);
MlpParams init_mlp(std::size_t embed_len, std::size_t hidden, Rng& rng);
BlockParams init_block(const BackboneConfig& cfg, Rng& rng);
PatchEmbedParams init_patch_embed(const BackboneConfig& cfg, Rng& rng);
Tensor xavier(Shape shape, Rng& rng);

/// Analytic parameter counts (kept independent of the assembled tensors).
std::size_t attention_param_count(std::size_t embed_len);
std::size_t block_param_count(const BackboneConfig& cfg);
std::size_t backbone_param_count(const BackboneConfig& cfg);

}  // namespace pseg
