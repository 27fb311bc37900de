#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "pseg/metrics.hpp"
#include "pseg/rng.hpp"

using namespace pseg;

namespace {

BinaryMask mask2d(std::size_t h, std::size_t w, const std::vector<std::size_t>& on) {
  BinaryMask m({h, w});
  for (auto i : on) m.bits[i] = 1;
  return m;
}

BinaryMask random_mask(Rng& rng, const std::vector<std::size_t>& extents, double density,
                       bool force_nonempty) {
  BinaryMask m(extents);
  for (auto& b : m.bits) b = rng.uniform() < density ? 1 : 0;
  if (force_nonempty && m.empty_mask()) m.bits[rng.index(m.size())] = 1;
  return m;
}

// independent set-arithmetic oracles
double dice_oracle(const BinaryMask& a, const BinaryMask& b) {
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.bits[i]) ++na;
    if (b.bits[i]) ++nb;
    if (a.bits[i] && b.bits[i]) ++inter;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

double iou_oracle(const BinaryMask& a, const BinaryMask& b) {
  std::size_t uni = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.bits[i] || b.bits[i]) ++uni;
    if (a.bits[i] && b.bits[i]) ++inter;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

// exhaustive-pairwise hausdorff oracle with the declared boundary convention
std::vector<std::array<long, 3>> boundary_oracle(const BinaryMask& m) {
  const bool is3d = m.ndim() == 3;
  const long D = is3d ? long(m.extents[0]) : 1;
  const long H = long(m.extents[is3d ? 1 : 0]);
  const long W = long(m.extents[is3d ? 2 : 1]);
  auto get = [&](long d, long r, long c) -> bool {
    if (d < 0 || d >= D || r < 0 || r >= H || c < 0 || c >= W) return false;
    return m.bits[(d * H + r) * W + c] != 0;
  };
  std::vector<std::array<long, 3>> out;
  for (long d = 0; d < D; ++d)
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c) {
        if (!get(d, r, c)) continue;
        bool edge = !get(d, r - 1, c) || !get(d, r + 1, c) || !get(d, r, c - 1) ||
                    !get(d, r, c + 1);
        if (is3d) edge = edge || !get(d - 1, r, c) || !get(d + 1, r, c);
        if (edge) out.push_back({d, r, c});
      }
  return out;
}

double hd_percentile_oracle(const BinaryMask& a, const BinaryMask& b, double q) {
  auto ba = boundary_oracle(a), bb = boundary_oracle(b);
  std::vector<double> dists;
  auto push_directed = [&](const auto& from, const auto& to) {
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& s : to) {
        const double dd = double(p[0] - s[0]), dr = double(p[1] - s[1]), dc = double(p[2] - s[2]);
        best = std::min(best, dd * dd + dr * dr + dc * dc);
      }
      dists.push_back(std::sqrt(best));
    }
  };
  push_directed(ba, bb);
  push_directed(bb, ba);
  std::sort(dists.begin(), dists.end());
  if (dists.size() == 1) return dists[0];
  const double rank = q * double(dists.size() - 1);
  const std::size_t lo = std::size_t(rank);
  const double f = rank - double(lo);
  const std::size_t hi = std::min(lo + 1, dists.size() - 1);
  return dists[lo] + f * (dists[hi] - dists[lo]);
}

}  // namespace

TEST_CASE("dice hand values") {
  BinaryMask a = mask2d(2, 2, {0, 1});
  CHECK(dice(a, a) == 1.0);
  BinaryMask b = mask2d(2, 2, {2, 3});
  CHECK(dice(a, b) == 0.0);
  // A = {p,q}, B = {q,r} -> 2*1/(2+2)
  BinaryMask c = mask2d(2, 2, {1, 2});
  CHECK(dice(a, c) == 0.5);
}

TEST_CASE("iou hand values") {
  BinaryMask a = mask2d(2, 2, {0, 1});
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, mask2d(2, 2, {2, 3})) == 0.0);
  CHECK(iou(a, mask2d(2, 2, {1, 2})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("both-empty masks score 1") {
  BinaryMask e1({4, 4}), e2({4, 4});
  CHECK(dice(e1, e2) == 1.0);
  CHECK(iou(e1, e2) == 1.0);
}

TEST_CASE("extent mismatch raises") {
  BinaryMask a({4, 4}), b({4, 5});
  CHECK_THROWS_AS(dice(a, b), MetricError);
  CHECK_THROWS_AS(iou(a, b), MetricError);
  CHECK_THROWS_AS(hd95(a, b), MetricError);
}

TEST_CASE("hd95: identical masks, two points five apart, empty error") {
  BinaryMask a = mask2d(8, 8, {2 * 8 + 3, 2 * 8 + 4});
  CHECK(hd95(a, a) == 0.0);

  BinaryMask p = mask2d(8, 8, {1 * 8 + 1});
  BinaryMask q = mask2d(8, 8, {4 * 8 + 5});  // offset (3,4): distance 5
  CHECK(hd95(p, q) == doctest::Approx(5.0).epsilon(1e-12));

  BinaryMask empty({8, 8});
  CHECK_THROWS_AS(hd95(p, empty), MetricError);
}

TEST_CASE("symmetry of all three metrics") {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    auto ext = t % 2 ? std::vector<std::size_t>{6, 7} : std::vector<std::size_t>{3, 5, 4};
    BinaryMask a = random_mask(rng, ext, 0.3, true);
    BinaryMask b = random_mask(rng, ext, 0.3, true);
    CHECK(dice(a, b) == dice(b, a));
    CHECK(iou(a, b) == iou(b, a));
    CHECK(hd95(a, b) == hd95(b, a));
  }
}

TEST_CASE("dice equals 2*iou/(1+iou) exactly") {
  Rng rng(23);
  for (int t = 0; t < 200; ++t) {
    BinaryMask a = random_mask(rng, {8, 8}, rng.uniform(0.1, 0.6), false);
    BinaryMask b = random_mask(rng, {8, 8}, rng.uniform(0.1, 0.6), false);
    const double i = iou(a, b);
    CHECK(dice(a, b) == doctest::Approx(2.0 * i / (1.0 + i)).epsilon(1e-14));
  }
}

TEST_CASE("brute-force oracle battery on random masks up to 16^3") {
  Rng rng(31);
  for (int t = 0; t < 300; ++t) {
    std::vector<std::size_t> ext;
    if (t % 3 == 0) {
      ext = {2 + rng.index(15), 2 + rng.index(15)};
    } else {
      ext = {2 + rng.index(7), 2 + rng.index(15), 2 + rng.index(15)};
    }
    BinaryMask a = random_mask(rng, ext, rng.uniform(0.05, 0.5), true);
    BinaryMask b = random_mask(rng, ext, rng.uniform(0.05, 0.5), true);
    CHECK(dice(a, b) == dice_oracle(a, b));
    CHECK(iou(a, b) == iou_oracle(a, b));
    CHECK(std::abs(hd95(a, b) - hd_percentile_oracle(a, b, 0.95)) < 1e-9);
  }
}

TEST_CASE("hd95 never exceeds the full Hausdorff distance") {
  Rng rng(37);
  for (int t = 0; t < 100; ++t) {
    BinaryMask a = random_mask(rng, {10, 10}, 0.25, true);
    BinaryMask b = random_mask(rng, {10, 10}, 0.25, true);
    CHECK(hd95(a, b) <= hd100(a, b) + 1e-12);
    CHECK(std::abs(hd100(a, b) - hd_percentile_oracle(a, b, 1.0)) < 1e-9);
  }
}
