#include "pseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pseg {

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                   double h, double tol) {
  FiniteDiffReport report;
  auto& tape = Tape::active();

  tape.clear();
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = f();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    analytic.push_back(leaf.requires_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));
  }
  tape.clear();

  auto eval = [&]() {
    Tensor y = f();
    const double v = y.item();
    tape.clear();
    return v;
  };

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = leaves[li].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = eval();
      data[i] = saved - h;
      const double fm = eval();
      data[i] = saved;

      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 0.01});
      report.coords++;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel >= tol) {
        report.pass = false;
        if (report.failures.size() < 32) {
          report.failures.push_back({li, i, a, numeric, rel});
        }
      }
    }
  }
  return report;
}

}  // namespace pseg
