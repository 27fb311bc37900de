#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pseg/tensor.hpp"

namespace pseg {

/// One coordinate whose analytic gradient disagreed with central differences.
struct CoordFailure {
  std::size_t leaf;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::size_t coords = 0;
  bool pass = true;
  std::vector<CoordFailure> failures;
};

/// Compares reverse-mode gradients of the scalar `f()` against central
/// differences (f(x+h e_i) - f(x-h e_i)) / 2h over every coordinate of every
/// tensor in `leaves`. `f` must rebuild its graph from the leaves on each
/// call and be deterministic. Relative error uses the convention
/// |a - n| / max(|a|, |n|, 0.01), which keeps finite-difference noise on
/// near-zero gradients from registering as failures.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                   double h = 1e-5, double tol = 1e-4);

/// Aggregate of finite_diff_check sweeps for one named operation.
struct OpCheck {
  std::string op;
  std::size_t cases = 0;
  std::size_t coords = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

}  // namespace pseg
