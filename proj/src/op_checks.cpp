#include "pseg/op_checks.hpp"

#include <algorithm>

#include "pseg/adapter.hpp"
#include "pseg/decoder.hpp"
#include "pseg/hyper_prompt.hpp"
#include "pseg/rng.hpp"
#include "pseg/space_depth.hpp"

namespace pseg {

namespace {

Tensor rand_t(Rng& rng, Shape shape, bool requires_grad = true, double lo = -1.0,
              double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Shape rand_shape(Rng& rng, std::size_t max_rank = 3, std::size_t max_extent = 5) {
  const std::size_t rank = 1 + rng.index(max_rank);
  Shape s(rank);
  for (auto& e : s) e = 1 + rng.index(max_extent);
  return s;
}

// constant projection to a scalar, a pure function of (seed, shape) so the
// checked function stays deterministic across re-evaluations
Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng r(Rng::mix(seed, out.size()));
  return sum(mul(out, rand_t(r, out.shape(), false)));
}

struct Case {
  std::function<Tensor()> f;
  std::vector<Tensor> leaves;
};

using CaseBuilder = std::function<Case(Rng&)>;

struct OpSpec {
  std::string name;
  CaseBuilder build;
};

std::vector<OpSpec> op_suite() {
  std::vector<OpSpec> ops;

  ops.push_back({"add", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor a = rand_t(rng, s);
    // half the cases broadcast a trailing-suffix operand
    Shape sb = (rng.uniform() < 0.5 && s.size() > 1) ? Shape(s.begin() + 1, s.end()) : s;
    Tensor b = rand_t(rng, sb);
    return Case{[=, ps = rng.next_u64()]() { return project(add(a, b), ps); }, {a, b}};
  }});
  ops.push_back({"sub", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor a = rand_t(rng, s), b = rand_t(rng, s);
    return Case{[=, ps = rng.next_u64()]() { return project(sub(a, b), ps); }, {a, b}};
  }});
  ops.push_back({"mul", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor a = rand_t(rng, s);
    Shape sb = (rng.uniform() < 0.5 && s.size() > 1) ? Shape(s.begin() + 1, s.end()) : s;
    Tensor b = rand_t(rng, sb);
    return Case{[=, ps = rng.next_u64()]() { return project(mul(a, b), ps); }, {a, b}};
  }});
  ops.push_back({"div", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor a = rand_t(rng, s);
    std::vector<double> dv(numel(s));
    for (auto& x : dv) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
    Tensor b = Tensor::from(s, std::move(dv), true);
    return Case{[=, ps = rng.next_u64()]() { return project(div(a, b), ps); }, {a, b}};
  }});
  ops.push_back({"scale", [](Rng& rng) {
    Tensor a = rand_t(rng, rand_shape(rng));
    const double c = rng.uniform(-2.0, 2.0);
    return Case{[=, ps = rng.next_u64()]() { return project(scale(a, c), ps); }, {a}};
  }});
  ops.push_back({"matmul", [](Rng& rng) {
    const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 1 + rng.index(4);
    const bool batched = rng.uniform() < 0.5;
    const std::size_t bsz = 1 + rng.index(3);
    Tensor a = batched ? rand_t(rng, {bsz, m, k}) : rand_t(rng, {m, k});
    Tensor b = (batched && rng.uniform() < 0.5) ? rand_t(rng, {bsz, k, n})
                                                : rand_t(rng, {k, n});
    if (!batched && b.ndim() == 3) b = rand_t(rng, {k, n});
    return Case{[=, ps = rng.next_u64()]() { return project(matmul(a, b), ps); }, {a, b}};
  }});
  ops.push_back({"transpose", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 4);
    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    Tensor a = rand_t(rng, s);
    return Case{[=, ps = rng.next_u64()]() { return project(transpose(a, perm), ps); }, {a}};
  }});
  ops.push_back({"reshape", [](Rng& rng) {
    const std::size_t m = 2 + rng.index(3), n = 2 + rng.index(3);
    Tensor a = rand_t(rng, {m, n});
    return Case{[=, ps = rng.next_u64()]() { return project(reshape(a, {a.size()}), ps); }, {a}};
  }});
  ops.push_back({"concat", [](Rng& rng) {
    const std::size_t n = 1 + rng.index(3);
    Tensor a = rand_t(rng, {2 + rng.index(2), n});
    Tensor b = rand_t(rng, {1 + rng.index(3), n});
    return Case{[=, ps = rng.next_u64()]() { return project(concat({a, b}, 0), ps); }, {a, b}};
  }});
  ops.push_back({"slice", [](Rng& rng) {
    const std::size_t n = 3 + rng.index(3);
    Tensor a = rand_t(rng, {n, 2 + rng.index(2)});
    const std::size_t start = rng.index(n - 1);
    const std::size_t len = 1 + rng.index(n - start - 1 > 0 ? n - start - 1 : 1);
    return Case{[=, ps = rng.next_u64()]() { return project(slice(a, 0, start, len), ps); }, {a}};
  }});
  ops.push_back({"relu", [](Rng& rng) {
    Tensor a = rand_t(rng, rand_shape(rng));
    return Case{[=, ps = rng.next_u64()]() { return project(relu(a), ps); }, {a}};
  }});
  ops.push_back({"gelu", [](Rng& rng) {
    Tensor a = rand_t(rng, rand_shape(rng), true, -2.0, 2.0);
    return Case{[=, ps = rng.next_u64()]() { return project(gelu(a), ps); }, {a}};
  }});
  ops.push_back({"sigmoid", [](Rng& rng) {
    Tensor a = rand_t(rng, rand_shape(rng), true, -3.0, 3.0);
    return Case{[=, ps = rng.next_u64()]() { return project(sigmoid(a), ps); }, {a}};
  }});
  ops.push_back({"softmax", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const std::size_t axis = rng.index(s.size());
    Tensor a = rand_t(rng, s, true, -3.0, 3.0);
    return Case{[=, ps = rng.next_u64()]() { return project(softmax(a, axis), ps); }, {a}};
  }});
  ops.push_back({"standardize", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    std::size_t axis = rng.index(s.size());
    if (s[axis] < 2) s[axis] = 2 + rng.index(3);
    Tensor a = rand_t(rng, s);
    return Case{[=, ps = rng.next_u64()]() { return project(standardize(a, axis), ps); }, {a}};
  }});
  ops.push_back({"layer_norm", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    std::size_t axis = rng.index(s.size());
    if (s[axis] < 2) s[axis] = 2 + rng.index(3);
    Tensor a = rand_t(rng, s);
    Tensor g = rand_t(rng, {s[axis]});
    Tensor b = rand_t(rng, {s[axis]});
    return Case{[=, ps = rng.next_u64()]() { return project(layer_norm(a, axis, g, b), ps); }, {a, g, b}};
  }});
  ops.push_back({"mul_axis", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const std::size_t axis = rng.index(s.size());
    Tensor a = rand_t(rng, s);
    Tensor v = rand_t(rng, {s[axis]});
    return Case{[=, ps = rng.next_u64()]() { return project(mul_axis(a, v, axis), ps); }, {a, v}};
  }});
  ops.push_back({"add_axis", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const std::size_t axis = rng.index(s.size());
    Tensor a = rand_t(rng, s);
    Tensor v = rand_t(rng, {s[axis]});
    return Case{[=, ps = rng.next_u64()]() { return project(add_axis(a, v, axis), ps); }, {a, v}};
  }});
  ops.push_back({"sum", [](Rng& rng) {
    Tensor a = rand_t(rng, rand_shape(rng));
    return Case{[=]() { return sum(a); }, {a}};
  }});
  ops.push_back({"mean_axis", [](Rng& rng) {
    Shape s = rand_shape(rng, 3, 5);
    const std::size_t axis = rng.index(s.size());
    Tensor a = rand_t(rng, s);
    return Case{[=, ps = rng.next_u64()]() { return project(mean_axis(a, axis), ps); }, {a}};
  }});
  ops.push_back({"upsample_bilinear2x", [](Rng& rng) {
    Tensor a = rand_t(rng, {1 + rng.index(2), 2 + rng.index(4), 2 + rng.index(4)});
    return Case{[=, ps = rng.next_u64()]() { return project(upsample_bilinear2x(a), ps); }, {a}};
  }});
  ops.push_back({"bce_with_logits", [](Rng& rng) {
    Shape s = rand_shape(rng);
    Tensor x = rand_t(rng, s, true, -3.0, 3.0);
    Tensor t = rand_t(rng, s, false, 0.0, 1.0);
    return Case{[=]() { return bce_with_logits_mean(x, t); }, {x}};
  }});

  ops.push_back({"adapter", [](Rng& rng) {
    AdapterConfig cfg{8, rng.uniform() < 0.5 ? std::size_t{2} : std::size_t{4}, 0.5};
    Rng prng = rng.fork(rng.next_u64());
    AdapterParams p = init_adapter(cfg, prng);
    // zero-init up-projection has zero gradient structure worth exercising
    // with nonzero weights too
    p.w_up = rand_t(prng, {cfg.width(), cfg.embed_len}, true, -0.5, 0.5);
    Tensor e = rand_t(rng, {1 + rng.index(3), std::size_t{8}});
    return Case{[=, ps = rng.next_u64()]() { return project(adapter_forward(e, p), ps); },
                {e, p.w_down, p.b_down, p.w_up, p.b_up}};
  }});
  ops.push_back({"vit_block", [](Rng& rng) {
    BackboneConfig cfg;
    cfg.image_extent = 8;
    cfg.patch = 4;
    cfg.embed_len = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.mlp_ratio = 2.0;
    Rng prng = rng.fork(rng.next_u64());
    BlockParams p = init_block(cfg, prng);
    Tensor x = rand_t(rng, {1 + rng.index(2), 2 + rng.index(3), std::size_t{8}});
    std::vector<Tensor> leaves = {x, p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo,
                                  p.ln1_g, p.ln1_b, p.mlp.w1, p.mlp.w2};
    return Case{[=, ps = rng.next_u64()]() { return project(vit_block(TokenGrid{x}, p).values, ps); },
                leaves};
  }});
  ops.push_back({"encoder_block_adapted", [](Rng& rng) {
    BackboneConfig bcfg;
    bcfg.embed_len = 8;
    bcfg.heads = 2;
    bcfg.mlp_ratio = 2.0;
    AdapterConfig acfg{8, 4, 0.5};
    Rng prng = rng.fork(rng.next_u64());
    BlockParams p = init_block(bcfg, prng);
    AdapterParams a1 = init_adapter(acfg, prng);
    AdapterParams a2 = init_adapter(acfg, prng);
    a1.w_up = rand_t(prng, {acfg.width(), acfg.embed_len}, true, -0.5, 0.5);
    a2.w_up = rand_t(prng, {acfg.width(), acfg.embed_len}, true, -0.5, 0.5);
    Tensor x = rand_t(rng, {1 + rng.index(2), 2 + rng.index(3), std::size_t{8}});
    const bool sd = rng.uniform() < 0.5;
    std::vector<Tensor> leaves = {x, a1.w_down, a1.w_up, a1.b_down, a1.b_up,
                                  a2.w_down, a2.w_up, p.attn.wv, p.mlp.w1};
    return Case{[=, ps = rng.next_u64()]() {
                  return project(encoder_block_adapted(TokenGrid{x}, p, a1, a2, acfg, sd).values,
                                 ps);
                },
                leaves};
  }});
  ops.push_back({"space_branch", [](Rng& rng) {
    Rng prng = rng.fork(rng.next_u64());
    AttentionParams p = init_attention(8, 2, prng);
    Tensor x = rand_t(rng, {1 + rng.index(3), 1 + rng.index(4), std::size_t{8}});
    return Case{[=, ps = rng.next_u64()]() { return project(space_branch(x, p), ps); },
                {x, p.wq, p.wk, p.wv, p.wo, p.bq, p.bo}};
  }});
  ops.push_back({"depth_branch", [](Rng& rng) {
    Rng prng = rng.fork(rng.next_u64());
    AttentionParams p = init_attention(8, 2, prng);
    Tensor x = rand_t(rng, {1 + rng.index(3), 1 + rng.index(4), std::size_t{8}});
    return Case{[=, ps = rng.next_u64()]() { return project(depth_branch(x, p), ps); },
                {x, p.wq, p.wk, p.wv, p.wo, p.bv}};
  }});
  ops.push_back({"space_depth_block", [](Rng& rng) {
    Rng prng = rng.fork(rng.next_u64());
    AttentionParams p = init_attention(8, 2, prng);
    Tensor x = rand_t(rng, {1 + rng.index(3), 1 + rng.index(4), std::size_t{8}});
    return Case{[=, ps = rng.next_u64()]() { return project(space_depth_block(x, p), ps); },
                {x, p.wq, p.wk, p.wv, p.wo}};
  }});
  ops.push_back({"hyper_prompt", [](Rng& rng) {
    const std::size_t np = 1 + rng.index(3), lp = 2 + rng.index(3), w = 2 + rng.index(3);
    Rng prng = rng.fork(rng.next_u64());
    HyperParams hp = init_hyper(lp, {{w, w}, {w, w}, {w, w}}, prng);
    Tensor ep = rand_t(rng, {np, lp});
    Tensor ed = rand_t(rng, {np, w});
    std::vector<Tensor> leaves = {ep, ed};
    for (auto& t : hp.proj_w) leaves.push_back(t);
    for (auto& t : hp.proj_b) leaves.push_back(t);
    return Case{[=, ps = rng.next_u64()]() {
                  return project(apply_hyper_prompt(ed, generate_weights(ep, hp)), ps);
                },
                leaves};
  }});
  ops.push_back({"prompt_condition", [](Rng& rng) {
    static const ConditionMode modes[3] = {ConditionMode::add, ConditionMode::concat,
                                           ConditionMode::hyper};
    const ConditionMode mode = modes[rng.index(3)];
    Rng prng = rng.fork(rng.next_u64());
    Tensor rw = xavier({std::size_t{8}, std::size_t{4}}, prng);
    Tensor rb = rand_t(prng, {4}, true, -0.1, 0.1);
    PromptConditionParams p;
    p.mode = mode;
    p.reduce_w = rw;
    p.reduce_b = rb;
    const std::size_t W = 4;
    if (mode == ConditionMode::add) {
      p.add_w = rand_t(prng, {4, W}, true, -0.5, 0.5);
      p.add_b = rand_t(prng, {W}, true, -0.1, 0.1);
    } else if (mode == ConditionMode::concat) {
      p.mix_w = rand_t(prng, {W + 4, W}, true, -0.5, 0.5);
      p.mix_b = rand_t(prng, {W}, true, -0.1, 0.1);
    } else {
      p.hyper = init_hyper(4, {{W, W}, {W, W}, {W, W}}, prng);
    }
    Tensor ep = rand_t(rng, {1 + rng.index(3), std::size_t{8}});
    Tensor ed = rand_t(rng, {2, 3, W});
    std::vector<Tensor> leaves = {ep, ed, rw, rb};
    if (p.add_w.defined()) leaves.push_back(p.add_w);
    if (p.mix_w.defined()) leaves.push_back(p.mix_w);
    for (auto& t : p.hyper.proj_w) leaves.push_back(t);
    return Case{[=, ps = rng.next_u64()]() { return project(prompt_condition(ed, ep, p), ps); }, leaves};
  }});
  ops.push_back({"decoder_block", [](Rng& rng) {
    BackboneConfig bcfg;
    bcfg.embed_len = 8;
    bcfg.heads = 2;
    bcfg.mlp_ratio = 2.0;
    AdapterConfig acfg{8, 2, 0.5};
    Rng prng = rng.fork(rng.next_u64());
    DecoderBlockParams p = init_decoder_block(bcfg, prng);
    DecoderAdapters ad;
    ad.a1 = init_adapter(acfg, prng);
    ad.a2 = init_adapter(acfg, prng);
    ad.a3 = init_adapter(acfg, prng);
    ad.a1.w_up = rand_t(prng, {acfg.width(), std::size_t{8}}, true, -0.5, 0.5);
    ad.a3.w_up = rand_t(prng, {acfg.width(), std::size_t{8}}, true, -0.5, 0.5);
    ad.cond.mode = ConditionMode::none;
    Tensor ep = rand_t(rng, {1 + rng.index(2), std::size_t{8}});
    Tensor tokens = rand_t(rng, {1 + rng.index(2), 1 + ep.extent(0), std::size_t{8}});
    Tensor img = rand_t(rng, {tokens.extent(0), 4, std::size_t{8}});
    std::vector<Tensor> leaves = {tokens, img, ad.a1.w_down, ad.a1.w_up, ad.a3.w_down,
                                  ad.a3.w_up, p.cross_t2i.wq, p.cross_i2t.wv, p.mlp.w1};
    return Case{[=, ps1 = rng.next_u64(), ps2 = rng.next_u64()]() {
                  DecoderState s{tokens, img, ep};
                  DecoderState out = two_way_block_adapted(s, p, ad, acfg);
                  return add(project(out.tokens, ps1), project(out.image, ps2));
                },
                leaves};
  }});
  ops.push_back({"decode_mask", [](Rng& rng) {
    BackboneConfig bcfg;
    bcfg.image_extent = 16;
    bcfg.patch = 4;
    bcfg.embed_len = 8;
    bcfg.heads = 2;
    Rng prng = rng.fork(rng.next_u64());
    MaskHeadParams head = init_mask_head(bcfg, prng);
    Tensor tokens = rand_t(rng, {1, 2 + rng.index(2), std::size_t{8}});
    Tensor img = rand_t(rng, {1, bcfg.tokens(), std::size_t{8}});
    std::vector<Tensor> leaves = {tokens, img, head.up1_w, head.up2_w, head.token_mlp.w1,
                                  head.token_mlp_w3, head.up1_b, head.token_mlp_b3};
    return Case{[=, ps = rng.next_u64()]() {
                  DecoderState s{tokens, img, tokens};
                  return project(decode_mask_logits(s, head, bcfg), ps);
                },
                leaves};
  }});

  return ops;
}

}  // namespace

std::vector<OpCheck> run_op_checks(std::uint64_t seed, std::size_t cases_per_op, double h,
                                   double tol) {
  std::vector<OpCheck> results;
  Rng root(seed);
  for (const auto& spec : op_suite()) {
    OpCheck check;
    check.op = spec.name;
    Rng op_rng = root.fork(std::hash<std::string>{}(spec.name));
    for (std::size_t c = 0; c < cases_per_op; ++c) {
      Rng case_rng = op_rng.fork(c);
      Case cs = spec.build(case_rng);
      for (auto& leaf : cs.leaves) leaf.state()->requires_grad = true;
      FiniteDiffReport rep = finite_diff_check(cs.f, cs.leaves, h, tol);
      if (!rep.pass) {
        // A ReLU pre-activation within h of zero makes the +/-h evaluations
        // straddle the kink; re-adjudicate with a finer step, where crossings
        // vanish but genuine backward bugs persist.
        FiniteDiffReport fine = finite_diff_check(cs.f, cs.leaves, h / 100.0, tol);
        if (fine.pass) rep = fine;
      }
      check.cases++;
      check.coords += rep.coords;
      check.max_rel_err = std::max(check.max_rel_err, rep.max_rel_err);
      check.pass = check.pass && rep.pass;
    }
    results.push_back(std::move(check));
  }
  return results;
}

}  // namespace pseg
