#pragma once

#include "pseg/backbone.hpp"

namespace pseg {

/// Width chain for the generated weight maps. The first in-length must equal
/// the conditioned embedding's length and interior widths must chain.
struct HyperWidths {
  std::size_t in = 0, out = 0;
};

/// Per layer: one projection (w: [L_p, in*out], b: [in*out]) turning each
/// prompt token into a 2D weight map.
struct HyperParams {
  std::vector<Tensor> proj_w, proj_b;
  std::vector<HyperWidths> widths;
  std::size_t prompt_len = 0;  // L_p
};

struct HyperWeightStack {
  std::vector<Tensor> maps;  // each [N_p, in, out]
};

HyperParams init_hyper(std::size_t prompt_len, const std::vector<HyperWidths>& widths, Rng& rng);
std::size_t hyper_param_count(const HyperParams& p);

/// Projects each prompt token through the per-layer MLP and reshapes the flat
/// embedding into the [N_p, in, out] weight map of that layer.
HyperWeightStack generate_weights(const Tensor& e_prompt /*[N_p, L_p]*/, const HyperParams& p);

/// Iterates e <- ReLU(standardize(e (x) w_i)) per prompt token over the stack;
/// standardization runs along the length axis with eps 1e-5 and no affine.
Tensor apply_hyper_prompt(const Tensor& e_down /*[N_p, L_in1]*/, const HyperWeightStack& stack,
                          double eps = 1e-5);

enum class ConditionMode { none, add, concat, hyper };

ConditionMode condition_mode_from_string(const std::string& s);
std::string to_string(ConditionMode m);

/// Parameters for folding the prompt embedding into an adapter's reduced
/// embedding. The prompt is mean-pooled over tokens and linearly reduced to
/// `reduced_len` before entering any mode.
struct PromptConditionParams {
  ConditionMode mode = ConditionMode::none;
  Tensor reduce_w, reduce_b;  // [L_p, reduced_len]; shared across blocks
  Tensor add_w, add_b;        // add: [reduced_len, L_down], zero-init
  Tensor mix_w, mix_b;        // concat: [L_down+reduced_len, L_down], [I;0]-init
  HyperParams hyper;          // hyper: widths chained from L_down
};

/// Applies the configured mode to e_down [..., L_down] given the raw prompt
/// embedding [N_p, L_p]. mode none returns e_down unchanged.
Tensor prompt_condition(const Tensor& e_down, const Tensor& e_prompt,
                        const PromptConditionParams& p);

}  // namespace pseg
