#include "pseg/model.hpp"

#include "pseg/space_depth.hpp"

namespace pseg {

void ModelConfig::validate() const {
  backbone.validate();
  if (adapter.embed_len != backbone.embed_len) {
    throw ShapeError("model config: adapter embed_len must match backbone embed_len");
  }
  adapter.validate();
  if (decoder_blocks == 0) throw ShapeError("model config: need at least one decoder block");
  if (prompt_reduced_len == 0) throw ShapeError("model config: prompt_reduced_len must be positive");
  if (backbone.channels != 1) throw ShapeError("model config: single-channel images only");
}

namespace {

std::vector<HyperWidths> default_hyper_widths(const AdapterConfig& a) {
  const std::size_t w = a.width();
  return {{w, w}, {w, w}, {w, w}};
}

PromptConditionParams init_condition(const ModelConfig& cfg, const Tensor& reduce_w,
                                     const Tensor& reduce_b, Rng& rng) {
  PromptConditionParams p;
  p.mode = cfg.mode;
  if (cfg.mode == ConditionMode::none) return p;
  p.reduce_w = reduce_w;
  p.reduce_b = reduce_b;
  const std::size_t R = cfg.prompt_reduced_len;
  const std::size_t W = cfg.adapter.width();
  switch (cfg.mode) {
    case ConditionMode::add:
      p.add_w = Tensor::zeros({R, W});  // identity at start
      p.add_b = Tensor::zeros({W});
      break;
    case ConditionMode::concat: {
      std::vector<double> mix((W + R) * W, 0.0);
      for (std::size_t i = 0; i < W; ++i) mix[i * W + i] = 1.0;  // [I; 0]
      p.mix_w = Tensor::from({W + R, W}, std::move(mix));
      p.mix_b = Tensor::zeros({W});
      break;
    }
    case ConditionMode::hyper:
      p.hyper = init_hyper(R, default_hyper_widths(cfg.adapter), rng);
      break;
    default:
      break;
  }
  return p;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(Rng::mix(seed, 0x6d6f64656cull));
  const std::size_t L = cfg.backbone.embed_len;

  m.patch = init_patch_embed(cfg.backbone, rng);
  for (std::size_t b = 0; b < cfg.backbone.blocks; ++b) {
    EncoderBlock eb;
    eb.block = init_block(cfg.backbone, rng);
    if (cfg.adapters_enabled) {
      eb.a1 = init_adapter(cfg.adapter, rng);
      eb.a2 = init_adapter(cfg.adapter, rng);
    }
    m.encoder.push_back(std::move(eb));
  }
  m.enc_norm_g = Tensor::full({L}, 1.0);
  m.enc_norm_b = Tensor::zeros({L});

  m.prompt_enc.embed_len = L;
  auto embed = [&]() {
    std::vector<double> v(L);
    for (auto& x : v) x = rng.normal(0.0, 0.02);
    return Tensor::from({L}, std::move(v));
  };
  m.prompt_enc.positive_click = embed();
  m.prompt_enc.negative_click = embed();
  m.prompt_enc.box_lo = embed();
  m.prompt_enc.box_hi = embed();

  if (cfg.adapters_enabled && cfg.mode != ConditionMode::none) {
    m.prompt_reduce_w = xavier({L, cfg.prompt_reduced_len}, rng);
    m.prompt_reduce_b = Tensor::zeros({cfg.prompt_reduced_len});
  }

  for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
    DecoderBlock db;
    db.block = init_decoder_block(cfg.backbone, rng);
    if (cfg.adapters_enabled) {
      db.adapters.a1 = init_adapter(cfg.adapter, rng);
      db.adapters.a2 = init_adapter(cfg.adapter, rng);
      db.adapters.a3 = init_adapter(cfg.adapter, rng);
      db.adapters.cond = init_condition(cfg, m.prompt_reduce_w, m.prompt_reduce_b, rng);
    }
    m.decoder.push_back(std::move(db));
  }

  {
    std::vector<double> v(L);
    for (auto& x : v) x = rng.normal(0.0, 0.02);
    m.output_token = Tensor::from({1, L}, std::move(v));
  }
  m.head = init_mask_head(cfg.backbone, rng);

  // every parameter participates in the graph; the optimizer applies the
  // freeze mask
  m.for_each_param([](const std::string&, Tensor& t, bool) {
    t.state()->requires_grad = true;
  });
  return m;
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&, bool)>& fn) {
  auto attn = [&](const std::string& base, AttentionParams& a, bool tr) {
    fn(base + ".wq", a.wq, tr);
    fn(base + ".bq", a.bq, tr);
    fn(base + ".wk", a.wk, tr);
    fn(base + ".bk", a.bk, tr);
    fn(base + ".wv", a.wv, tr);
    fn(base + ".bv", a.bv, tr);
    fn(base + ".wo", a.wo, tr);
    fn(base + ".bo", a.bo, tr);
  };
  auto mlp = [&](const std::string& base, MlpParams& p, bool tr) {
    fn(base + ".w1", p.w1, tr);
    fn(base + ".b1", p.b1, tr);
    fn(base + ".w2", p.w2, tr);
    fn(base + ".b2", p.b2, tr);
  };
  const bool on = cfg.adapters_enabled;
  auto adapter = [&](const std::string& base, AdapterParams& a) {
    if (!a.w_down.defined()) return;
    fn(base + ".w_down", a.w_down, on);
    fn(base + ".b_down", a.b_down, on);
    fn(base + ".w_up", a.w_up, on);
    fn(base + ".b_up", a.b_up, on);
  };

  fn("patch.weight", patch.weight, false);
  fn("patch.bias", patch.bias, false);
  fn("patch.pos", patch.pos, false);
  for (std::size_t b = 0; b < encoder.size(); ++b) {
    const std::string base = "encoder." + std::to_string(b);
    auto& eb = encoder[b];
    fn(base + ".ln1_g", eb.block.ln1_g, false);
    fn(base + ".ln1_b", eb.block.ln1_b, false);
    attn(base + ".attn", eb.block.attn, false);
    fn(base + ".ln2_g", eb.block.ln2_g, false);
    fn(base + ".ln2_b", eb.block.ln2_b, false);
    mlp(base + ".mlp", eb.block.mlp, false);
    adapter(base + ".adapter1", eb.a1);
    adapter(base + ".adapter2", eb.a2);
  }
  fn("encoder.norm_g", enc_norm_g, false);
  fn("encoder.norm_b", enc_norm_b, false);

  fn("prompt.positive_click", prompt_enc.positive_click, on);
  fn("prompt.negative_click", prompt_enc.negative_click, on);
  fn("prompt.box_lo", prompt_enc.box_lo, on);
  fn("prompt.box_hi", prompt_enc.box_hi, on);
  if (prompt_reduce_w.defined()) {
    fn("prompt.reduce_w", prompt_reduce_w, true);
    fn("prompt.reduce_b", prompt_reduce_b, true);
  }

  for (std::size_t b = 0; b < decoder.size(); ++b) {
    const std::string base = "decoder." + std::to_string(b);
    auto& db = decoder[b];
    attn(base + ".self_attn", db.block.self_attn, false);
    fn(base + ".ln1_g", db.block.ln1_g, false);
    fn(base + ".ln1_b", db.block.ln1_b, false);
    attn(base + ".cross_t2i", db.block.cross_t2i, false);
    fn(base + ".ln2_g", db.block.ln2_g, false);
    fn(base + ".ln2_b", db.block.ln2_b, false);
    mlp(base + ".mlp", db.block.mlp, false);
    fn(base + ".ln3_g", db.block.ln3_g, false);
    fn(base + ".ln3_b", db.block.ln3_b, false);
    attn(base + ".cross_i2t", db.block.cross_i2t, false);
    fn(base + ".ln4_g", db.block.ln4_g, false);
    fn(base + ".ln4_b", db.block.ln4_b, false);
    adapter(base + ".adapter1", db.adapters.a1);
    adapter(base + ".adapter2", db.adapters.a2);
    adapter(base + ".adapter3", db.adapters.a3);
    auto& cond = db.adapters.cond;
    if (cond.add_w.defined()) {
      fn(base + ".cond.add_w", cond.add_w, true);
      fn(base + ".cond.add_b", cond.add_b, true);
    }
    if (cond.mix_w.defined()) {
      fn(base + ".cond.mix_w", cond.mix_w, true);
      fn(base + ".cond.mix_b", cond.mix_b, true);
    }
    for (std::size_t i = 0; i < cond.hyper.proj_w.size(); ++i) {
      fn(base + ".hyper.proj" + std::to_string(i) + "_w", cond.hyper.proj_w[i], true);
      fn(base + ".hyper.proj" + std::to_string(i) + "_b", cond.hyper.proj_b[i], true);
    }
  }

  fn("output_token", output_token, on);
  fn("head.up1_w", head.up1_w, on);
  fn("head.up1_b", head.up1_b, on);
  fn("head.up2_w", head.up2_w, on);
  fn("head.up2_b", head.up2_b, on);
  mlp("head.token_mlp", head.token_mlp, on);
  fn("head.token_mlp.w3", head.token_mlp_w3, on);
  fn("head.token_mlp.b3", head.token_mlp_b3, on);
}

ParamCounts Model::count_params() {
  ParamCounts c;
  for_each_param([&](const std::string&, Tensor& t, bool trainable) {
    c.total += t.size();
    if (trainable) c.trainable += t.size();
  });
  return c;
}

TokenGrid Model::encode_image(const std::vector<double>& image) const {
  TokenGrid x = patch_embed(image, patch, cfg.backbone);
  for (const auto& eb : encoder) {
    if (cfg.adapters_enabled) {
      x = encoder_block_adapted(x, eb.block, eb.a1, eb.a2, cfg.adapter, cfg.space_depth);
    } else if (cfg.space_depth) {
      // unadapted block with the two-branch attention
      const std::size_t last = x.values.ndim() - 1;
      Tensor n1 = layer_norm(x.values, last, eb.block.ln1_g, eb.block.ln1_b);
      Tensor h = add(x.values, space_depth_block(n1, eb.block.attn));
      Tensor n2 = layer_norm(h, last, eb.block.ln2_g, eb.block.ln2_b);
      Tensor mo = add(matmul(gelu(add(matmul(n2, eb.block.mlp.w1), eb.block.mlp.b1)),
                             eb.block.mlp.w2),
                      eb.block.mlp.b2);
      x = TokenGrid{add(h, mo)};
    } else {
      x = vit_block(x, eb.block);
    }
  }
  return TokenGrid{layer_norm(x.values, 2, enc_norm_g, enc_norm_b)};
}

Tensor Model::forward_logits(const std::vector<double>& image, const PromptSet& prompts) const {
  if (prompts.degenerate()) {
    throw PromptError("forward: prompt set must contain a click or a box");
  }
  TokenGrid img = encode_image(image);
  Tensor e_prompt = prompts.encoded ? *prompts.encoded
                                    : encode_prompts(prompts, prompt_enc, mask_extents());
  const std::size_t D = img.d(), L = img.l();
  const std::size_t T = 1 + e_prompt.extent(0);

  Tensor tokens0 = concat({output_token, e_prompt}, 0);            // [T, L]
  Tensor tokens = add(Tensor::zeros({D, T, L}), tokens0);          // broadcast over slices
  DecoderState state{tokens, img.values, e_prompt};
  for (const auto& db : decoder) {
    state = cfg.adapters_enabled ? two_way_block_adapted(state, db.block, db.adapters, cfg.adapter)
                                 : two_way_block(state, db.block);
  }
  return decode_mask_logits(state, head, cfg.backbone);
}

BinaryMask Model::predict_mask(const std::vector<double>& image, const PromptSet& prompts) const {
  Tensor logits = forward_logits(image, prompts);
  BinaryMask m(mask_extents());
  const auto& v = logits.data();
  for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = v[i] > 0.0 ? 1 : 0;  // sigmoid > 0.5
  return m;
}

std::vector<std::size_t> Model::mask_extents() const {
  const auto& b = cfg.backbone;
  if (b.depth > 1) return {b.depth, b.image_extent, b.image_extent};
  return {b.image_extent, b.image_extent};
}

ParamCounts expected_param_counts(const ModelConfig& cfg) {
  const std::size_t L = cfg.backbone.embed_len;
  const std::size_t W = cfg.adapter.width();
  const std::size_t R = cfg.prompt_reduced_len;
  ParamCounts c;

  std::size_t frozen = backbone_param_count(cfg.backbone) +
                       cfg.decoder_blocks * decoder_block_param_count(cfg.backbone);

  std::size_t train = 0;
  const std::size_t per_adapter = adapter_param_count(cfg.adapter);
  if (cfg.adapters_enabled) {
    train += 2 * cfg.backbone.blocks * per_adapter;  // encoder adapters
    train += 3 * cfg.decoder_blocks * per_adapter;   // decoder adapters
  }
  train += 4 * L;                                   // prompt type embeddings
  if (cfg.adapters_enabled && cfg.mode != ConditionMode::none) {
    train += L * R + R;                             // shared prompt reduction
    switch (cfg.mode) {
      case ConditionMode::add: train += cfg.decoder_blocks * (R * W + W); break;
      case ConditionMode::concat: train += cfg.decoder_blocks * ((W + R) * W + W); break;
      case ConditionMode::hyper: train += cfg.decoder_blocks * 3 * ((R + 1) * W * W); break;
      default: break;
    }
  }
  train += L;                                       // output token
  train += mask_head_param_count(cfg.backbone);

  c.total = frozen + train;
  c.trainable = cfg.adapters_enabled ? train : 0;
  return c;
}

}  // namespace pseg

namespace pseg {

void enumerate_param_shapes(const ModelConfig& cfg,
                            const std::function<void(const std::string&, const Shape&, bool)>& fn) {
  cfg.validate();
  const std::size_t L = cfg.backbone.embed_len;
  const std::size_t M = cfg.backbone.mlp_hidden();
  const std::size_t W = cfg.adapter.width();
  const std::size_t R = cfg.prompt_reduced_len;
  const bool on = cfg.adapters_enabled;

  auto attn = [&](const std::string& base, bool tr) {
    fn(base + ".wq", {L, L}, tr);
    fn(base + ".bq", {L}, tr);
    fn(base + ".wk", {L, L}, tr);
    fn(base + ".bk", {L}, tr);
    fn(base + ".wv", {L, L}, tr);
    fn(base + ".bv", {L}, tr);
    fn(base + ".wo", {L, L}, tr);
    fn(base + ".bo", {L}, tr);
  };
  auto mlp = [&](const std::string& base, std::size_t hidden, std::size_t out, bool tr) {
    fn(base + ".w1", {L, hidden}, tr);
    fn(base + ".b1", {hidden}, tr);
    fn(base + ".w2", {hidden, out}, tr);
    fn(base + ".b2", {out}, tr);
  };
  auto adapter = [&](const std::string& base) {
    fn(base + ".w_down", {L, W}, on);
    fn(base + ".b_down", {W}, on);
    fn(base + ".w_up", {W, L}, on);
    fn(base + ".b_up", {L}, on);
  };

  fn("patch.weight", {cfg.backbone.patch * cfg.backbone.patch * cfg.backbone.channels, L}, false);
  fn("patch.bias", {L}, false);
  fn("patch.pos", {cfg.backbone.tokens(), L}, false);
  for (std::size_t b = 0; b < cfg.backbone.blocks; ++b) {
    const std::string base = "encoder." + std::to_string(b);
    fn(base + ".ln1_g", {L}, false);
    fn(base + ".ln1_b", {L}, false);
    attn(base + ".attn", false);
    fn(base + ".ln2_g", {L}, false);
    fn(base + ".ln2_b", {L}, false);
    mlp(base + ".mlp", M, L, false);
    if (on) {
      adapter(base + ".adapter1");
      adapter(base + ".adapter2");
    }
  }
  fn("encoder.norm_g", {L}, false);
  fn("encoder.norm_b", {L}, false);

  fn("prompt.positive_click", {L}, on);
  fn("prompt.negative_click", {L}, on);
  fn("prompt.box_lo", {L}, on);
  fn("prompt.box_hi", {L}, on);
  if (on && cfg.mode != ConditionMode::none) {
    fn("prompt.reduce_w", {L, R}, true);
    fn("prompt.reduce_b", {R}, true);
  }

  for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string base = "decoder." + std::to_string(b);
    attn(base + ".self_attn", false);
    fn(base + ".ln1_g", {L}, false);
    fn(base + ".ln1_b", {L}, false);
    attn(base + ".cross_t2i", false);
    fn(base + ".ln2_g", {L}, false);
    fn(base + ".ln2_b", {L}, false);
    mlp(base + ".mlp", M, L, false);
    fn(base + ".ln3_g", {L}, false);
    fn(base + ".ln3_b", {L}, false);
    attn(base + ".cross_i2t", false);
    fn(base + ".ln4_g", {L}, false);
    fn(base + ".ln4_b", {L}, false);
    if (on) {
      adapter(base + ".adapter1");
      adapter(base + ".adapter2");
      adapter(base + ".adapter3");
      if (cfg.mode == ConditionMode::add) {
        fn(base + ".cond.add_w", {R, W}, true);
        fn(base + ".cond.add_b", {W}, true);
      } else if (cfg.mode == ConditionMode::concat) {
        fn(base + ".cond.mix_w", {W + R, W}, true);
        fn(base + ".cond.mix_b", {W}, true);
      } else if (cfg.mode == ConditionMode::hyper) {
        for (std::size_t i = 0; i < 3; ++i) {
          fn(base + ".hyper.proj" + std::to_string(i) + "_w", {R, W * W}, true);
          fn(base + ".hyper.proj" + std::to_string(i) + "_b", {W * W}, true);
        }
      }
    }
  }

  fn("output_token", {1, L}, on);
  fn("head.up1_w", {L, 4 * (L / 2)}, on);
  fn("head.up1_b", {L / 2}, on);
  fn("head.up2_w", {L / 2, 4 * (L / 4)}, on);
  fn("head.up2_b", {L / 4}, on);
  fn("head.token_mlp.w1", {L, L / 4}, on);
  fn("head.token_mlp.b1", {L / 4}, on);
  fn("head.token_mlp.w2", {L / 4, L / 4}, on);
  fn("head.token_mlp.b2", {L / 4}, on);
  fn("head.token_mlp.w3", {L / 4, L / 4}, on);
  fn("head.token_mlp.b3", {L / 4}, on);
}

ParamCounts count_params_from_layout(const ModelConfig& cfg) {
  ParamCounts c;
  enumerate_param_shapes(cfg, [&](const std::string&, const Shape& s, bool trainable) {
    c.total += numel(s);
    if (trainable) c.trainable += numel(s);
  });
  return c;
}

}  // namespace pseg
