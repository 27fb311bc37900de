#include "pseg/backbone.hpp"

#include <cmath>

namespace pseg {

void BackboneConfig::validate() const {
  if (image_extent == 0 || patch == 0 || embed_len == 0 || heads == 0 || blocks == 0 ||
      depth == 0 || channels == 0) {
    throw ShapeError("backbone config: all extents must be positive");
  }
  if (image_extent % patch != 0) {
    throw ShapeError("backbone config: image extent " + std::to_string(image_extent) +
                     " not divisible by patch " + std::to_string(patch));
  }
  if (embed_len % heads != 0) {
    throw ShapeError("backbone config: embed_len " + std::to_string(embed_len) +
                     " not divisible by heads " + std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0)) throw ShapeError("backbone config: mlp_ratio must be positive");
}

Tensor xavier(Shape shape, Rng& rng) {
  const std::size_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape[0];
  const std::size_t fan_out = shape[shape.size() - 1];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

AttentionParams init_attention(std::size_t L, std::size_t heads, Rng& rng) {
  AttentionParams p;
  p.heads = heads;
  p.wq = xavier({L, L}, rng);
  p.bq = Tensor::zeros({L});
  p.wk = xavier({L, L}, rng);
  p.bk = Tensor::zeros({L});
  p.wv = xavier({L, L}, rng);
  p.bv = Tensor::zeros({L});
  p.wo = xavier({L, L}, rng);
  p.bo = Tensor::zeros({L});
  return p;
}

MlpParams init_mlp(std::size_t L, std::size_t hidden, Rng& rng) {
  MlpParams p;
  p.w1 = xavier({L, hidden}, rng);
  p.b1 = Tensor::zeros({hidden});
  p.w2 = xavier({hidden, L}, rng);
  p.b2 = Tensor::zeros({L});
  return p;
}

BlockParams init_block(const BackboneConfig& cfg, Rng& rng) {
  BlockParams p;
  p.ln1_g = Tensor::full({cfg.embed_len}, 1.0);
  p.ln1_b = Tensor::zeros({cfg.embed_len});
  p.attn = init_attention(cfg.embed_len, cfg.heads, rng);
  p.ln2_g = Tensor::full({cfg.embed_len}, 1.0);
  p.ln2_b = Tensor::zeros({cfg.embed_len});
  p.mlp = init_mlp(cfg.embed_len, cfg.mlp_hidden(), rng);
  return p;
}

PatchEmbedParams init_patch_embed(const BackboneConfig& cfg, Rng& rng) {
  PatchEmbedParams p;
  const std::size_t in_len = cfg.patch * cfg.patch * cfg.channels;
  p.weight = xavier({in_len, cfg.embed_len}, rng);
  p.bias = Tensor::zeros({cfg.embed_len});
  std::vector<double> pos(cfg.tokens() * cfg.embed_len);
  for (auto& v : pos) v = rng.normal(0.0, 0.02);
  p.pos = Tensor::from({cfg.tokens(), cfg.embed_len}, std::move(pos));
  return p;
}

Tensor patch_matrix(const std::vector<double>& image, const BackboneConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.image_extent, W = cfg.image_extent, C = cfg.channels;
  const std::size_t D = cfg.depth, P = cfg.patch, S = cfg.side_tokens();
  if (image.size() != D * H * W * C) {
    throw ShapeError("patch_matrix: image has " + std::to_string(image.size()) +
                     " values, expected " + std::to_string(D * H * W * C));
  }
  const std::size_t plen = P * P * C;
  std::vector<double> out(D * S * S * plen);
  std::size_t w = 0;
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t pr = 0; pr < S; ++pr) {
      for (std::size_t pc = 0; pc < S; ++pc) {
        for (std::size_t r = 0; r < P; ++r) {
          for (std::size_t c = 0; c < P; ++c) {
            for (std::size_t ch = 0; ch < C; ++ch) {
              out[w++] = image[((d * H + pr * P + r) * W + pc * P + c) * C + ch];
            }
          }
        }
      }
    }
  }
  return Tensor::from({D, S * S, plen}, std::move(out));
}

TokenGrid patch_embed(const std::vector<double>& image, const PatchEmbedParams& p,
                      const BackboneConfig& cfg) {
  Tensor patches = patch_matrix(image, cfg);                    // [D, N, P*P*C]
  Tensor tokens = add(matmul(patches, p.weight), p.bias);       // [D, N, L]
  return TokenGrid{add(tokens, p.pos)};                         // pos broadcast over D
}

Tensor attention_mix(const Tensor& q_src, const Tensor& kv_src, const AttentionParams& p) {
  const std::size_t L = p.wq.extent(0);
  if (q_src.ndim() < 2 || q_src.shape().back() != L || kv_src.shape().back() != L) {
    throw ShapeError("attention: token length mismatch, q " + shape_str(q_src.shape()) +
                     " kv " + shape_str(kv_src.shape()) + " vs params L=" + std::to_string(L));
  }
  if (L % p.heads != 0) throw ShapeError("attention: L not divisible by head count");
  const std::size_t hd = L / p.heads;

  // flatten leading axes into one batch axis
  Shape lead(q_src.shape().begin(), q_src.shape().end() - 2);
  const std::size_t batch = numel(lead);
  const std::size_t S = q_src.extent(q_src.ndim() - 2);
  const std::size_t T = kv_src.extent(kv_src.ndim() - 2);
  Tensor q2 = reshape(q_src, {batch, S, L});
  Tensor kv2 = reshape(kv_src, {batch, T, L});

  auto heads_view = [&](const Tensor& t, std::size_t len) {
    // [B, len, L] -> [B, H, len, hd]
    return transpose(reshape(t, {batch, len, p.heads, hd}), {0, 2, 1, 3});
  };
  Tensor q = heads_view(add(matmul(q2, p.wq), p.bq), S);
  Tensor k = heads_view(add(matmul(kv2, p.wk), p.bk), T);
  Tensor v = heads_view(add(matmul(kv2, p.wv), p.bv), T);

  Tensor scores = scale(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(double(hd)));
  Tensor attn = softmax(scores, 3);
  Tensor ctx = matmul(attn, v);                                   // [B, H, S, hd]
  Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {batch, S, L});
  Tensor out = add(matmul(merged, p.wo), p.bo);

  Shape out_shape = lead;
  out_shape.push_back(S);
  out_shape.push_back(L);
  return reshape(out, out_shape);
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p) {
  return attention_mix(x, x, p);
}

TokenGrid vit_block(const TokenGrid& x, const BlockParams& p) {
  const std::size_t last = x.values.ndim() - 1;
  Tensor h = add(x.values, multi_head_attention(layer_norm(x.values, last, p.ln1_g, p.ln1_b), p.attn));
  Tensor n2 = layer_norm(h, last, p.ln2_g, p.ln2_b);
  Tensor mlp_out = add(matmul(gelu(add(matmul(n2, p.mlp.w1), p.mlp.b1)), p.mlp.w2), p.mlp.b2);
  return TokenGrid{add(h, mlp_out)};
}

std::size_t attention_param_count(std::size_t L) {
  return 4 * (L * L + L);
}

std::size_t block_param_count(const BackboneConfig& cfg) {
  const std::size_t L = cfg.embed_len, M = cfg.mlp_hidden();
  return 2 * L                       // ln1
         + attention_param_count(L)  // qkv + proj
         + 2 * L                     // ln2
         + L * M + M + M * L + L;    // mlp
}

std::size_t backbone_param_count(const BackboneConfig& cfg) {
  const std::size_t L = cfg.embed_len;
  const std::size_t patch_in = cfg.patch * cfg.patch * cfg.channels;
  return patch_in * L + L            // projection
         + cfg.tokens() * L          // positional table
         + cfg.blocks * block_param_count(cfg)
         + 2 * L;                    // final norm
}

}  // namespace pseg
