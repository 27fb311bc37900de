#pragma once

#include <optional>
#include <vector>

#include "pseg/mask.hpp"
#include "pseg/tensor.hpp"

namespace pseg {

struct PromptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One user click. Coordinates are (row, col) for 2D masks and
/// (row, col, depth) for 3D; label +1 marks foreground, -1 background.
struct Click {
  std::vector<long> pos;
  int label = 1;
};

/// Half-open integer box, lo inclusive / hi exclusive, axes ordered like
/// Click coordinates: (row, col[, depth]).
struct BBox {
  std::vector<long> lo, hi;

  long span(std::size_t ax) const { return hi[ax] - lo[ax]; }
  double volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) v *= static_cast<double>(span(i));
    return v;
  }
};

/// IoU between two boxes of the same rank.
double box_iou(const BBox& a, const BBox& b);

struct PromptSet {
  std::vector<Click> clicks;
  std::optional<BBox> box;
  std::optional<Tensor> encoded;

  bool degenerate() const { return clicks.empty() && !box.has_value(); }
};

/// Uniformly samples n_pos clicks from gt foreground and n_neg from
/// background (with replacement). Deterministic per seed. Throws when a
/// required region is empty.
std::vector<Click> sample_random_clicks(const BinaryMask& gt, int n_pos, int n_neg,
                                        std::uint64_t seed);

/// Picks the most interior voxel of the largest connected error component of
/// pred vs gt (4-neighborhood in 2D, 6 in 3D). Interior-ness is hop distance
/// from the component's own boundary; ties fall to the lexicographically
/// smallest coordinate. Label +1 for a missed region, -1 for a spurious one.
/// Returns nullopt when pred == gt.
std::optional<Click> sample_iterative_click(const BinaryMask& pred, const BinaryMask& gt);

/// Tight bounding box of gt when overlap == 1; otherwise a seeded jittered
/// box whose IoU with the tight box lands within overlap +/- 0.05 (rejection
/// sampled, capped at 1000 draws).
BBox generate_bbox(const BinaryMask& gt, double overlap, std::uint64_t seed);

/// Tight box of a nonempty mask (the overlap == 1 case, exposed for tests).
BBox tight_bbox(const BinaryMask& gt);

/// Learned embeddings of the sparse prompt encoder. All rank-1 of length
/// embed_len.
struct PromptEncoderParams {
  Tensor positive_click;
  Tensor negative_click;
  Tensor box_lo;
  Tensor box_hi;
  std::size_t embed_len = 0;
};

/// Sinusoidal encoding of a point, axes blocked per coordinate; coordinates
/// are normalized by `extents` (ordered like Click coordinates).
std::vector<double> positional_encoding(const std::vector<double>& coords,
                                        const std::vector<double>& extents, std::size_t len);

/// Stacks one token per click (positional encoding + label embedding) and two
/// corner tokens per box. Returns [N_p, embed_len].
Tensor encode_prompts(const PromptSet& p, const PromptEncoderParams& params,
                      const std::vector<std::size_t>& mask_extents);

}  // namespace pseg
