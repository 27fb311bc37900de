#pragma once

#include <functional>

#include "pseg/decoder.hpp"
#include "pseg/prompts.hpp"

namespace pseg {

struct ModelConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  std::size_t decoder_blocks = 2;
  ConditionMode mode = ConditionMode::hyper;
  bool space_depth = false;          // use the two-branch attention in the encoder
  std::size_t prompt_reduced_len = 16;  // pooled prompt embedding length for conditioning
  bool adapters_enabled = true;

  void validate() const;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction() const {
    return total ? static_cast<double>(trainable) / static_cast<double>(total) : 0.0;
  }
};

/// Assembled promptable segmentation model: frozen randomly-initialized
/// backbone + decoder, trainable adapters / prompt embeddings / mask head.
struct Model {
  struct EncoderBlock {
    BlockParams block;
    AdapterParams a1, a2;
  };
  struct DecoderBlock {
    DecoderBlockParams block;
    DecoderAdapters adapters;
  };

  ModelConfig cfg;
  PatchEmbedParams patch;
  std::vector<EncoderBlock> encoder;
  Tensor enc_norm_g, enc_norm_b;
  PromptEncoderParams prompt_enc;
  Tensor prompt_reduce_w, prompt_reduce_b;  // shared by all decoder blocks (mode != none)
  std::vector<DecoderBlock> decoder;
  Tensor output_token;  // [1, L]
  MaskHeadParams head;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  /// Visits every parameter once, in checkpoint order, with its freeze-mask
  /// flag (true = trainable).
  void for_each_param(const std::function<void(const std::string&, Tensor&, bool)>& fn);

  ParamCounts count_params();

  /// Image is raw [D,H,W] voxel data (single channel).
  TokenGrid encode_image(const std::vector<double>& image) const;
  Tensor forward_logits(const std::vector<double>& image, const PromptSet& prompts) const;
  BinaryMask predict_mask(const std::vector<double>& image, const PromptSet& prompts) const;

  std::vector<std::size_t> mask_extents() const;
};

/// Closed-form parameter counts derived from the config alone; kept separate
/// from the tensor enumeration so the two can check each other.
ParamCounts expected_param_counts(const ModelConfig& cfg);

/// Walks the parameter layout a config assembles to, without materializing
/// any tensors (billion-parameter configs fit nowhere near desk memory).
/// Emits exactly the records Model::for_each_param would.
void enumerate_param_shapes(const ModelConfig& cfg,
                            const std::function<void(const std::string&, const Shape&, bool)>& fn);

/// Parameter counts via enumerate_param_shapes.
ParamCounts count_params_from_layout(const ModelConfig& cfg);

}  // namespace pseg
