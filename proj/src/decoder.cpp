#include "pseg/decoder.hpp"

namespace pseg {

namespace {

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  return add(matmul(gelu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// [D, Hp, Wp, Ci] -> [D, 2Hp, 2Wp, Co] via linear projection + pixel shuffle
Tensor shuffle_up(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t D = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t co = w.extent(1) / 4;
  Tensor proj = matmul(x, w);                                        // [D,H,W,4co]
  Tensor grid = reshape(proj, {D, H, W, 2, 2, co});
  Tensor swapped = transpose(grid, {0, 1, 3, 2, 4, 5});              // [D,H,2,W,2,co]
  return add(reshape(swapped, {D, 2 * H, 2 * W, co}), b);
}

}  // namespace

DecoderState two_way_block(const DecoderState& s, const DecoderBlockParams& p) {
  const std::size_t last = s.tokens.ndim() - 1;
  Tensor t = layer_norm(add(s.tokens, multi_head_attention(s.tokens, p.self_attn)), last,
                        p.ln1_g, p.ln1_b);
  t = layer_norm(add(t, attention_mix(t, s.image, p.cross_t2i)), last, p.ln2_g, p.ln2_b);
  t = layer_norm(add(t, mlp_forward(t, p.mlp)), last, p.ln3_g, p.ln3_b);
  Tensor img = layer_norm(add(s.image, attention_mix(s.image, t, p.cross_i2t)), last, p.ln4_g,
                          p.ln4_b);
  return DecoderState{t, img, s.e_prompt};
}

DecoderState two_way_block_adapted(const DecoderState& s, const DecoderBlockParams& p,
                                   const DecoderAdapters& ad, const AdapterConfig& cfg) {
  const std::size_t last = s.tokens.ndim() - 1;
  Tensor t = layer_norm(add(s.tokens, multi_head_attention(s.tokens, p.self_attn)), last,
                        p.ln1_g, p.ln1_b);

  // first adapter: serial on the cross-attention output, bottleneck
  // conditioned on the prompt embedding
  Tensor ca = attention_mix(t, s.image, p.cross_t2i);
  Tensor cond = prompt_condition(adapter_reduce(ca, ad.a1), s.e_prompt, ad.cond);
  Tensor a1_out = add(ca, add(matmul(cond, ad.a1.w_up), ad.a1.b_up));
  t = layer_norm(add(t, a1_out), last, p.ln2_g, p.ln2_b);

  // second adapter: parallel on the MLP path, scaled
  Tensor mlp_out = mlp_forward(t, p.mlp);
  Tensor parallel = scale(adapter_bottleneck(t, ad.a2), cfg.scale);
  t = layer_norm(add(add(t, mlp_out), parallel), last, p.ln3_g, p.ln3_b);

  // third adapter: serial after the image-side residual, before its LN
  Tensor img = add(s.image, attention_mix(s.image, t, p.cross_i2t));
  img = layer_norm(adapter_forward(img, ad.a3), last, p.ln4_g, p.ln4_b);
  return DecoderState{t, img, s.e_prompt};
}

Tensor decode_mask_logits(const DecoderState& s, const MaskHeadParams& head,
                          const BackboneConfig& cfg) {
  const std::size_t D = s.image.extent(0), N = s.image.extent(1), L = s.image.extent(2);
  const std::size_t side = cfg.side_tokens();
  if (N != side * side) {
    throw ShapeError("decode_mask: token count " + std::to_string(N) +
                     " does not form a square grid");
  }
  Tensor grid = reshape(s.image, {D, side, side, L});
  Tensor up = gelu(shuffle_up(grid, head.up1_w, head.up1_b));
  up = gelu(shuffle_up(up, head.up2_w, head.up2_b));            // [D, 4*side, 4*side, c2]
  const std::size_t up_side = 4 * side;
  const std::size_t c2 = up.extent(3);

  // dynamic per-pixel classifier from the output token
  Tensor out_tok = slice(s.tokens, 1, 0, 1);                    // [D, 1, L]
  Tensor w_pix = add(matmul(gelu(add(matmul(gelu(add(matmul(out_tok, head.token_mlp.w1),
                                                     head.token_mlp.b1)),
                                            head.token_mlp.w2),
                                        head.token_mlp.b2)),
                            head.token_mlp_w3),
                     head.token_mlp_b3);                        // [D, 1, c2]

  Tensor feat = reshape(up, {D, up_side * up_side, c2});
  Tensor logits = matmul(feat, transpose(w_pix, {0, 2, 1}));    // [D, P, 1]
  Tensor map = reshape(logits, {D, up_side, up_side});
  std::size_t cur = up_side;
  while (cur < cfg.image_extent) {
    map = upsample_bilinear2x(map);
    cur *= 2;
  }
  if (cur != cfg.image_extent) {
    throw ShapeError("decode_mask: cannot reach extent " + std::to_string(cfg.image_extent) +
                     " from upscaled side " + std::to_string(up_side));
  }
  return map;  // [D, H, W]
}

DecoderBlockParams init_decoder_block(const BackboneConfig& cfg, Rng& rng) {
  DecoderBlockParams p;
  const std::size_t L = cfg.embed_len;
  p.self_attn = init_attention(L, cfg.heads, rng);
  p.ln1_g = Tensor::full({L}, 1.0);
  p.ln1_b = Tensor::zeros({L});
  p.cross_t2i = init_attention(L, cfg.heads, rng);
  p.ln2_g = Tensor::full({L}, 1.0);
  p.ln2_b = Tensor::zeros({L});
  p.mlp = init_mlp(L, cfg.mlp_hidden(), rng);
  p.ln3_g = Tensor::full({L}, 1.0);
  p.ln3_b = Tensor::zeros({L});
  p.cross_i2t = init_attention(L, cfg.heads, rng);
  p.ln4_g = Tensor::full({L}, 1.0);
  p.ln4_b = Tensor::zeros({L});
  return p;
}

MaskHeadParams init_mask_head(const BackboneConfig& cfg, Rng& rng) {
  const std::size_t L = cfg.embed_len;
  if (L % 4 != 0) throw ShapeError("mask head: embed_len must be divisible by 4");
  MaskHeadParams h;
  h.up1_w = xavier({L, 4 * (L / 2)}, rng);
  h.up1_b = Tensor::zeros({L / 2});
  h.up2_w = xavier({L / 2, 4 * (L / 4)}, rng);
  h.up2_b = Tensor::zeros({L / 4});
  h.token_mlp.w1 = xavier({L, L / 4}, rng);
  h.token_mlp.b1 = Tensor::zeros({L / 4});
  h.token_mlp.w2 = xavier({L / 4, L / 4}, rng);
  h.token_mlp.b2 = Tensor::zeros({L / 4});
  h.token_mlp_w3 = xavier({L / 4, L / 4}, rng);
  h.token_mlp_b3 = Tensor::zeros({L / 4});
  return h;
}

std::size_t decoder_block_param_count(const BackboneConfig& cfg) {
  const std::size_t L = cfg.embed_len, M = cfg.mlp_hidden();
  return 3 * attention_param_count(L)  // self, t2i, i2t
         + 8 * L                        // four LN pairs
         + L * M + M + M * L + L;       // mlp
}

std::size_t mask_head_param_count(const BackboneConfig& cfg) {
  const std::size_t L = cfg.embed_len, h = L / 4;
  return L * 4 * (L / 2) + L / 2       // up1
         + (L / 2) * 4 * (L / 4) + L / 4  // up2
         + L * h + h + h * h + h + h * h + h;  // token mlp (3 layers)
}

}  // namespace pseg
