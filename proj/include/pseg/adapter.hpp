#pragma once

#include "pseg/backbone.hpp"

namespace pseg {

struct AdapterConfig {
  std::size_t embed_len = 64;
  std::size_t reduction = 4;  // bottleneck width = embed_len / reduction
  double scale = 0.5;         // s, weights the parallel adapter's contribution

  std::size_t width() const { return embed_len / reduction; }
  void validate() const {
    if (reduction == 0 || embed_len % reduction != 0) {
      throw ShapeError("adapter config: embed_len " + std::to_string(embed_len) +
                       " not divisible by reduction " + std::to_string(reduction));
    }
    // scale 0 is legal and simply silences the parallel adapter
    if (scale < 0.0) throw ShapeError("adapter config: scale must not be negative");
  }
};

/// Bottleneck adapter weights. Up-projection starts at zero so a freshly
/// inserted adapter is exactly the identity.
struct AdapterParams {
  Tensor w_down;  // [L, L/r]
  Tensor b_down;  // [L/r]
  Tensor w_up;    // [L/r, L]
  Tensor b_up;    // [L]
};

AdapterParams init_adapter(const AdapterConfig& cfg, Rng& rng);
std::size_t adapter_param_count(const AdapterConfig& cfg);

/// Bottleneck activation ReLU(e W_down + b_down); the "reduced embedding".
Tensor adapter_reduce(const Tensor& e, const AdapterParams& p);

/// down -> ReLU -> up, no skip (the parallel form).
Tensor adapter_bottleneck(const Tensor& e, const AdapterParams& p);

/// e + bottleneck(e) (the serial form with its internal residual).
Tensor adapter_forward(const Tensor& e, const AdapterParams& p);

/// Standard ViT block with the two encoder adapters: the serial adapter on
/// the attention output before its residual add, and the parallel adapter on
/// the MLP residual path scaled by cfg.scale. When space_depth is set the
/// attention runs as the two-branch space/depth form (needed for 3D inputs).
TokenGrid encoder_block_adapted(const TokenGrid& x, const BlockParams& bp,
                                const AdapterParams& a1, const AdapterParams& a2,
                                const AdapterConfig& cfg, bool space_depth = false);

}  // namespace pseg
