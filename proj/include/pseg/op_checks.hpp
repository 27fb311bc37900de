#pragma once

#include "pseg/gradcheck.hpp"

namespace pseg {

/// Runs finite-difference sweeps over every differentiable op in the kit:
/// the tensor primitives, the adapter, the ViT and decoder blocks, the
/// space/depth branches, and the hyper-prompt path. Shapes and values are
/// drawn from `seed`; each op gets `cases_per_op` independent cases.
std::vector<OpCheck> run_op_checks(std::uint64_t seed, std::size_t cases_per_op = 100,
                                   double h = 1e-5, double tol = 1e-4);

}  // namespace pseg
