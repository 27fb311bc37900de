#include "pseg/space_depth.hpp"

namespace pseg {

Tensor space_branch(const Tensor& x, const AttentionParams& p) {
  if (x.ndim() != 3) {
    throw ShapeError("space_branch: expected [D,N,L], got " + shape_str(x.shape()));
  }
  return multi_head_attention(x, p);
}

Tensor depth_branch(const Tensor& x, const AttentionParams& p) {
  if (x.ndim() != 3) {
    throw ShapeError("depth_branch: expected [D,N,L], got " + shape_str(x.shape()));
  }
  Tensor t = transpose(x, {1, 0, 2});                   // [N, D, L]
  return transpose(multi_head_attention(t, p), {1, 0, 2});
}

Tensor space_depth_block(const Tensor& x, const AttentionParams& p) {
  return add(space_branch(x, p), depth_branch(x, p));
}

}  // namespace pseg
