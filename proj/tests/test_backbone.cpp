#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pseg/backbone.hpp"
#include "pseg/gradcheck.hpp"

using namespace pseg;

namespace {
BackboneConfig small_cfg() {
  BackboneConfig c;
  c.image_extent = 32;
  c.patch = 8;
  c.embed_len = 16;
  c.heads = 4;
  c.blocks = 2;
  c.mlp_ratio = 2.0;
  return c;
}

Tensor rand_tensor(Rng& rng, Shape shape, bool rg = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), rg);
}
}  // namespace

TEST_CASE("patch_embed shape law, 2D and volumetric") {
  BackboneConfig cfg = small_cfg();
  Rng rng(1);
  PatchEmbedParams p = init_patch_embed(cfg, rng);
  std::vector<double> image(32 * 32, 0.5);
  TokenGrid g = patch_embed(image, p, cfg);
  CHECK(g.values.shape() == Shape{1, 16, 16});

  cfg.depth = 4;
  PatchEmbedParams p3 = init_patch_embed(cfg, rng);
  std::vector<double> volume(4 * 32 * 32, 0.1);
  TokenGrid g3 = patch_embed(volume, p3, cfg);
  CHECK(g3.values.shape() == Shape{4, 16, 16});
}

TEST_CASE("patch_embed of a zero image with zero bias is the positional table") {
  BackboneConfig cfg = small_cfg();
  Rng rng(2);
  PatchEmbedParams p = init_patch_embed(cfg, rng);
  std::vector<double> image(32 * 32, 0.0);
  TokenGrid g = patch_embed(image, p, cfg);
  for (std::size_t t = 0; t < cfg.tokens(); ++t) {
    for (std::size_t l = 0; l < cfg.embed_len; ++l) {
      CHECK(g.values.data()[t * cfg.embed_len + l] == p.pos.data()[t * cfg.embed_len + l]);
    }
  }
}

TEST_CASE("patch_embed rejects indivisible extents") {
  BackboneConfig cfg = small_cfg();
  cfg.image_extent = 30;
  std::vector<double> image(30 * 30, 0.0);
  Rng rng(3);
  CHECK_THROWS_AS(patch_matrix(image, cfg), ShapeError);
}

TEST_CASE("single-token attention reduces to the value path") {
  Rng rng(5);
  AttentionParams p = init_attention(8, 2, rng);
  p.bv = rand_tensor(rng, {8});
  p.bo = rand_tensor(rng, {8});
  Tensor x = rand_tensor(rng, {1, 8});
  Tensor out = multi_head_attention(x, p);
  // softmax over one logit is 1, so out = (x Wv + bv) Wo + bo
  Tensor expect = add(matmul(add(matmul(x, p.wv), p.bv), p.wo), p.bo);
  REQUIRE(out.shape() == expect.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("identical tokens produce identical outputs") {
  Rng rng(7);
  AttentionParams p = init_attention(8, 4, rng);
  std::vector<double> row(8);
  for (auto& v : row) v = rng.uniform(-1, 1);
  std::vector<double> data;
  for (int s = 0; s < 5; ++s) data.insert(data.end(), row.begin(), row.end());
  Tensor x = Tensor::from({5, 8}, std::move(data));
  Tensor out = multi_head_attention(x, p);
  for (std::size_t s = 1; s < 5; ++s) {
    for (std::size_t l = 0; l < 8; ++l) {
      CHECK(out.data()[s * 8 + l] == doctest::Approx(out.data()[l]).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention is token-permutation equivariant") {
  Rng rng(11);
  AttentionParams p = init_attention(16, 4, rng);
  Tensor x = rand_tensor(rng, {6, 16});
  Tensor out = multi_head_attention(x, p);

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<double> permuted(6 * 16);
  for (std::size_t s = 0; s < 6; ++s) {
    for (std::size_t l = 0; l < 16; ++l) permuted[s * 16 + l] = x.data()[perm[s] * 16 + l];
  }
  Tensor out_p = multi_head_attention(Tensor::from({6, 16}, std::move(permuted)), p);
  for (std::size_t s = 0; s < 6; ++s) {
    for (std::size_t l = 0; l < 16; ++l) {
      CHECK(out_p.data()[s * 16 + l] == doctest::Approx(out.data()[perm[s] * 16 + l]).epsilon(1e-10));
    }
  }
}

TEST_CASE("vit_block with zero output projections is the identity") {
  BackboneConfig cfg = small_cfg();
  Rng rng(13);
  BlockParams p = init_block(cfg, rng);
  p.attn.wo = Tensor::zeros({16, 16});
  p.attn.bo = Tensor::zeros({16});
  p.mlp.w2 = Tensor::zeros({cfg.mlp_hidden(), 16});
  p.mlp.b2 = Tensor::zeros({16});
  Tensor x = rand_tensor(rng, {1, 9, 16});
  TokenGrid out = vit_block(TokenGrid{x}, p);
  CHECK(out.values.data() == x.data());
}

TEST_CASE("vit_block preserves shape") {
  BackboneConfig cfg = small_cfg();
  Rng rng(17);
  BlockParams p = init_block(cfg, rng);
  Tensor x = rand_tensor(rng, {1, 9, 16});
  CHECK(vit_block(TokenGrid{x}, p).values.shape() == x.shape());
}

TEST_CASE("two-block stack gradient vs central differences") {
  BackboneConfig cfg;
  cfg.embed_len = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  Rng rng(19);
  BlockParams p1 = init_block(cfg, rng);
  BlockParams p2 = init_block(cfg, rng);
  Tensor x = rand_tensor(rng, {1, 4, 8}, true);
  std::vector<Tensor> leaves = {x, p1.attn.wq, p1.mlp.w1, p2.attn.wv, p2.mlp.w2, p2.ln1_g};
  for (auto& t : leaves) t.state()->requires_grad = true;
  Tensor w = rand_tensor(rng, {1, 4, 8});
  auto f = [&]() { return sum(mul(vit_block(vit_block(TokenGrid{x}, p1), p2).values, w)); };
  FiniteDiffReport rep = finite_diff_check(f, leaves);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("block parameter count formula matches allocated tensors") {
  BackboneConfig cfg = small_cfg();
  Rng rng(23);
  BlockParams p = init_block(cfg, rng);
  std::size_t actual = p.ln1_g.size() + p.ln1_b.size() + p.ln2_g.size() + p.ln2_b.size() +
                       p.mlp.w1.size() + p.mlp.b1.size() + p.mlp.w2.size() + p.mlp.b2.size();
  for (const Tensor* t : {&p.attn.wq, &p.attn.bq, &p.attn.wk, &p.attn.bk, &p.attn.wv, &p.attn.bv,
                          &p.attn.wo, &p.attn.bo}) {
    actual += t->size();
  }
  CHECK(actual == block_param_count(cfg));

  PatchEmbedParams pe = init_patch_embed(cfg, rng);
  const std::size_t backbone_actual = pe.weight.size() + pe.bias.size() + pe.pos.size() +
                                      cfg.blocks * block_param_count(cfg) + 2 * cfg.embed_len;
  CHECK(backbone_actual == backbone_param_count(cfg));
}

TEST_CASE("forward is deterministic per seed") {
  BackboneConfig cfg = small_cfg();
  auto run = [&]() {
    Rng rng(77);
    PatchEmbedParams pe = init_patch_embed(cfg, rng);
    BlockParams bp = init_block(cfg, rng);
    std::vector<double> image(32 * 32);
    for (auto& v : image) v = rng.uniform(0.0, 1.0);
    return vit_block(patch_embed(image, pe, cfg), bp).values.data();
  };
  CHECK(run() == run());
}

TEST_CASE("config validation rejects bad divisibility") {
  BackboneConfig cfg = small_cfg();
  cfg.embed_len = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = small_cfg();
  cfg.patch = 5;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
}
