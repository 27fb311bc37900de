#include "pseg/hyper_prompt.hpp"

namespace pseg {

HyperParams init_hyper(std::size_t prompt_len, const std::vector<HyperWidths>& widths, Rng& rng) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i].out != widths[i + 1].in) {
      throw ShapeError("hyper widths do not chain at layer " + std::to_string(i) + ": out " +
                       std::to_string(widths[i].out) + " vs in " +
                       std::to_string(widths[i + 1].in));
    }
  }
  HyperParams p;
  p.prompt_len = prompt_len;
  p.widths = widths;
  for (const auto& w : widths) {
    p.proj_w.push_back(xavier({prompt_len, w.in * w.out}, rng));
    p.proj_b.push_back(Tensor::zeros({w.in * w.out}));
  }
  return p;
}

std::size_t hyper_param_count(const HyperParams& p) {
  std::size_t n = 0;
  for (const auto& w : p.widths) n += (p.prompt_len + 1) * w.in * w.out;
  return n;
}

HyperWeightStack generate_weights(const Tensor& e_prompt, const HyperParams& p) {
  if (e_prompt.ndim() != 2 || e_prompt.extent(1) != p.prompt_len) {
    throw ShapeError("generate_weights: prompt embedding " + shape_str(e_prompt.shape()) +
                     " does not match L_p=" + std::to_string(p.prompt_len));
  }
  for (std::size_t i = 0; i + 1 < p.widths.size(); ++i) {
    if (p.widths[i].out != p.widths[i + 1].in) {
      throw ShapeError("generate_weights: width chain broken at layer " + std::to_string(i));
    }
  }
  const std::size_t n_tokens = e_prompt.extent(0);
  HyperWeightStack stack;
  for (std::size_t i = 0; i < p.widths.size(); ++i) {
    Tensor flat = add(matmul(e_prompt, p.proj_w[i]), p.proj_b[i]);  // [N_p, in*out]
    stack.maps.push_back(reshape(flat, {n_tokens, p.widths[i].in, p.widths[i].out}));
  }
  return stack;
}

Tensor apply_hyper_prompt(const Tensor& e_down, const HyperWeightStack& stack, double eps) {
  if (e_down.ndim() != 2) {
    throw ShapeError("apply_hyper_prompt: expected [N_p, L], got " + shape_str(e_down.shape()));
  }
  const std::size_t n_tokens = e_down.extent(0);
  Tensor e = reshape(e_down, {n_tokens, std::size_t{1}, e_down.extent(1)});
  for (const auto& w : stack.maps) {
    if (w.extent(0) != n_tokens || w.extent(1) != e.extent(2)) {
      throw ShapeError("apply_hyper_prompt: map " + shape_str(w.shape()) +
                       " does not accept embedding " + shape_str(e.shape()));
    }
    e = relu(standardize(matmul(e, w), 2, eps));  // per-token matmul, norm along length
  }
  return reshape(e, {n_tokens, e.extent(2)});
}

ConditionMode condition_mode_from_string(const std::string& s) {
  if (s == "none") return ConditionMode::none;
  if (s == "add") return ConditionMode::add;
  if (s == "concat") return ConditionMode::concat;
  if (s == "hyper") return ConditionMode::hyper;
  throw ShapeError("unknown prompt-condition mode: " + s);
}

std::string to_string(ConditionMode m) {
  switch (m) {
    case ConditionMode::none: return "none";
    case ConditionMode::add: return "add";
    case ConditionMode::concat: return "concat";
    case ConditionMode::hyper: return "hyper";
  }
  return "?";
}

Tensor prompt_condition(const Tensor& e_down, const Tensor& e_prompt,
                        const PromptConditionParams& p) {
  if (p.mode == ConditionMode::none) return e_down;

  // pooled prompt token, reduced: [reduced_len]
  Tensor pooled = mean_axis(e_prompt, 0);
  Tensor reduced =
      reshape(add(matmul(reshape(pooled, {std::size_t{1}, pooled.extent(0)}), p.reduce_w),
                  p.reduce_b),
              {p.reduce_w.extent(1)});

  switch (p.mode) {
    case ConditionMode::add: {
      Tensor shift = reshape(
          add(matmul(reshape(reduced, {std::size_t{1}, reduced.extent(0)}), p.add_w), p.add_b),
          {p.add_w.extent(1)});
      return add(e_down, shift);  // shift broadcast over leading axes
    }
    case ConditionMode::concat: {
      // tile the reduced prompt across e_down's leading axes
      Shape tile_shape = e_down.shape();
      tile_shape.back() = reduced.extent(0);
      Tensor tiled = add(Tensor::zeros(tile_shape), reduced);
      Tensor cat = concat({e_down, tiled}, e_down.ndim() - 1);
      return add(matmul(cat, p.mix_w), p.mix_b);
    }
    case ConditionMode::hyper: {
      HyperWeightStack stack =
          generate_weights(reshape(reduced, {std::size_t{1}, reduced.extent(0)}), p.hyper);
      Tensor e = e_down;
      for (const auto& map : stack.maps) {
        Tensor w = reshape(map, {map.extent(1), map.extent(2)});  // single pooled token
        e = relu(standardize(matmul(e, w), e.ndim() - 1, 1e-5));
      }
      return e;
    }
    default:
      break;
  }
  return e_down;
}

}  // namespace pseg
