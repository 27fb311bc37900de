#pragma once

#include "pseg/backbone.hpp"

namespace pseg {

/// Attention over the N spatial tokens, independently per depth slice.
Tensor space_branch(const Tensor& x /*[D,N,L]*/, const AttentionParams& p);

/// Transpose to [N,D,L], attend over depth with the SAME parameters, and
/// transpose back.
Tensor depth_branch(const Tensor& x, const AttentionParams& p);

/// space_branch(x) + depth_branch(x).
Tensor space_depth_block(const Tensor& x, const AttentionParams& p);

}  // namespace pseg
