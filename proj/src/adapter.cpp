#include "pseg/adapter.hpp"

#include <cmath>

#include "pseg/space_depth.hpp"

namespace pseg {

AdapterParams init_adapter(const AdapterConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t L = cfg.embed_len, w = cfg.width();
  AdapterParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(L));
  std::vector<double> down(L * w);
  for (auto& v : down) v = rng.uniform(-bound, bound);
  p.w_down = Tensor::from({L, w}, std::move(down));
  p.b_down = Tensor::zeros({w});
  p.w_up = Tensor::zeros({w, L});  // identity at init
  p.b_up = Tensor::zeros({L});
  return p;
}

std::size_t adapter_param_count(const AdapterConfig& cfg) {
  const std::size_t L = cfg.embed_len, w = cfg.width();
  return L * w + w + w * L + L;
}

Tensor adapter_reduce(const Tensor& e, const AdapterParams& p) {
  if (e.ndim() < 2 || e.shape().back() != p.w_down.extent(0)) {
    throw ShapeError("adapter: input " + shape_str(e.shape()) + " does not end in L=" +
                     std::to_string(p.w_down.extent(0)));
  }
  return relu(add(matmul(e, p.w_down), p.b_down));
}

Tensor adapter_bottleneck(const Tensor& e, const AdapterParams& p) {
  return add(matmul(adapter_reduce(e, p), p.w_up), p.b_up);
}

Tensor adapter_forward(const Tensor& e, const AdapterParams& p) {
  return add(e, adapter_bottleneck(e, p));
}

TokenGrid encoder_block_adapted(const TokenGrid& x, const BlockParams& bp,
                                const AdapterParams& a1, const AdapterParams& a2,
                                const AdapterConfig& cfg, bool space_depth) {
  cfg.validate();
  const std::size_t last = x.values.ndim() - 1;
  Tensor n1 = layer_norm(x.values, last, bp.ln1_g, bp.ln1_b);
  Tensor attn_out =
      space_depth ? space_depth_block(n1, bp.attn) : multi_head_attention(n1, bp.attn);
  // serial adapter on the attention output, before the residual add
  Tensor h = add(x.values, adapter_forward(attn_out, a1));
  Tensor n2 = layer_norm(h, last, bp.ln2_g, bp.ln2_b);
  Tensor mlp_out = add(matmul(gelu(add(matmul(n2, bp.mlp.w1), bp.mlp.b1)), bp.mlp.w2), bp.mlp.b2);
  // parallel adapter on the MLP residual path, scaled by s
  Tensor parallel = scale(adapter_bottleneck(n2, a2), cfg.scale);
  return TokenGrid{add(add(h, mlp_out), parallel)};
}

}  // namespace pseg
