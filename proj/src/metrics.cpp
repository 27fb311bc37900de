#include "pseg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace pseg {

namespace {

void check_extents(const BinaryMask& a, const BinaryMask& b, const char* name) {
  if (a.extents != b.extents) {
    throw MetricError(std::string(name) + ": extent mismatch " + extents_str(a.extents) + " vs " +
                      extents_str(b.extents));
  }
}

struct Overlap {
  std::size_t na = 0, nb = 0, inter = 0;
};

Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    o.na += a.bits[i];
    o.nb += b.bits[i];
    o.inter += static_cast<std::size_t>(a.bits[i] & b.bits[i]);
  }
  return o;
}

// integer coordinates of boundary voxels (face-adjacent to background or grid edge)
std::vector<std::array<long, 3>> boundary(const BinaryMask& m) {
  const bool is3d = m.ndim() == 3;
  const long D = is3d ? static_cast<long>(m.extents[0]) : 1;
  const long H = static_cast<long>(m.extents[is3d ? 1 : 0]);
  const long W = static_cast<long>(m.extents[is3d ? 2 : 1]);
  auto idx = [&](long d, long r, long c) { return (d * H + r) * W + c; };
  auto inside = [&](long d, long r, long c) {
    if (d < 0 || d >= D || r < 0 || r >= H || c < 0 || c >= W) return false;
    return m.bits[idx(d, r, c)] != 0;
  };
  std::vector<std::array<long, 3>> out;
  for (long d = 0; d < D; ++d) {
    for (long r = 0; r < H; ++r) {
      for (long c = 0; c < W; ++c) {
        if (!m.bits[idx(d, r, c)]) continue;
        bool edge = !inside(d, r - 1, c) || !inside(d, r + 1, c) || !inside(d, r, c - 1) ||
                    !inside(d, r, c + 1);
        if (is3d && !edge) edge = !inside(d - 1, r, c) || !inside(d + 1, r, c);
        if (edge) out.push_back({d, r, c});
      }
    }
  }
  return out;
}

void directed_distances(const std::vector<std::array<long, 3>>& from,
                        const std::vector<std::array<long, 3>>& to, std::vector<double>& out) {
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dd = static_cast<double>(p[0] - q[0]);
      const double dr = static_cast<double>(p[1] - q[1]);
      const double dc = static_cast<double>(p[2] - q[2]);
      best = std::min(best, dd * dd + dr * dr + dc * dc);
    }
    out.push_back(std::sqrt(best));
  }
}

double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  if (xs.size() == 1) return xs[0];
  const double rank = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double f = rank - static_cast<double>(lo);
  return xs[lo] + f * (xs[hi] - xs[lo]);
}

double hausdorff_percentile(const BinaryMask& a, const BinaryMask& b, double q,
                            const char* name) {
  check_extents(a, b, name);
  if (a.empty_mask() || b.empty_mask()) {
    throw MetricError(std::string(name) + ": undefined for an empty mask");
  }
  const auto ba = boundary(a);
  const auto bb = boundary(b);
  std::vector<double> dists;
  dists.reserve(ba.size() + bb.size());
  directed_distances(ba, bb, dists);
  directed_distances(bb, ba, dists);
  return percentile(std::move(dists), q);
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  check_extents(a, b, "dice");
  const Overlap o = overlap(a, b);
  if (o.na + o.nb == 0) return 1.0;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.na + o.nb);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  check_extents(a, b, "iou");
  const Overlap o = overlap(a, b);
  const std::size_t uni = o.na + o.nb - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

double hd95(const BinaryMask& a, const BinaryMask& b) {
  return hausdorff_percentile(a, b, 0.95, "hd95");
}

double hd100(const BinaryMask& a, const BinaryMask& b) {
  return hausdorff_percentile(a, b, 1.0, "hd100");
}

}  // namespace pseg
