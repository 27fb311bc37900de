#pragma once

#include "pseg/mask.hpp"

namespace pseg {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// 2|A∩B| / (|A| + |B|); 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// |A∩B| / |A∪B|; 1 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// 95th percentile (linear interpolation) of the combined set of nearest
/// boundary-to-boundary Euclidean distances, both directions. Boundary voxels
/// are mask voxels with at least one face-neighbor outside the mask; the grid
/// border counts as outside. Throws on empty masks.
double hd95(const BinaryMask& a, const BinaryMask& b);

/// Largest possible Hausdorff percentile (the 100th); shares the boundary
/// convention of hd95.
double hd100(const BinaryMask& a, const BinaryMask& b);

}  // namespace pseg
