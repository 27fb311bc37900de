#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <deque>

#include "pseg/prompts.hpp"
#include "pseg/rng.hpp"

using namespace pseg;

namespace {
BinaryMask mask2d(std::size_t h, std::size_t w) { return BinaryMask({h, w}); }

void fill_rect(BinaryMask& m, long r0, long c0, long r1, long c1) {
  const long W = long(m.extents.back());
  for (long r = r0; r < r1; ++r) {
    for (long c = c0; c < c1; ++c) m.bits[r * W + c] = 1;
  }
}

// independent interior-distance oracle: hop distance from outside the set
std::vector<long> hop_distance_oracle(const BinaryMask& m) {
  const long H = long(m.extents[0]), W = long(m.extents[1]);
  std::vector<long> dist(m.size(), -1);
  std::deque<long> q;
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      if (!m.bits[r * W + c]) continue;
      const bool edge = r == 0 || r == H - 1 || c == 0 || c == W - 1 ||
                        !m.bits[(r - 1) * W + c] || !m.bits[(r + 1) * W + c] ||
                        !m.bits[r * W + c - 1] || !m.bits[r * W + c + 1];
      if (edge) {
        dist[r * W + c] = 0;
        q.push_back(r * W + c);
      }
    }
  }
  while (!q.empty()) {
    const long v = q.front();
    q.pop_front();
    const long r = v / W, c = v % W;
    const long nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (auto& nb : nbrs) {
      if (nb[0] < 0 || nb[0] >= H || nb[1] < 0 || nb[1] >= W) continue;
      const long ni = nb[0] * W + nb[1];
      if (m.bits[ni] && dist[ni] < 0) {
        dist[ni] = dist[v] + 1;
        q.push_back(ni);
      }
    }
  }
  return dist;
}
}  // namespace

TEST_CASE("forced click on a single-foreground-pixel mask") {
  BinaryMask m = mask2d(6, 6);
  m.bits[3 * 6 + 4] = 1;
  auto clicks = sample_random_clicks(m, 1, 0, 42);
  REQUIRE(clicks.size() == 1);
  CHECK(clicks[0].pos == std::vector<long>{3, 4});
  CHECK(clicks[0].label == 1);
}

TEST_CASE("empty required regions raise errors naming the region") {
  BinaryMask all_fg = mask2d(4, 4);
  std::fill(all_fg.bits.begin(), all_fg.bits.end(), 1);
  try {
    sample_random_clicks(all_fg, 0, 1, 0);
    FAIL("expected PromptError");
  } catch (const PromptError& e) {
    CHECK(std::string(e.what()).find("background") != std::string::npos);
  }
  BinaryMask all_bg = mask2d(4, 4);
  try {
    sample_random_clicks(all_bg, 1, 0, 0);
    FAIL("expected PromptError");
  } catch (const PromptError& e) {
    CHECK(std::string(e.what()).find("foreground") != std::string::npos);
  }
}

TEST_CASE("half-plane membership over 10 seeds") {
  BinaryMask m = mask2d(16, 16);
  fill_rect(m, 0, 0, 8, 16);  // top half foreground
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto clicks = sample_random_clicks(m, 3, 2, seed);
    for (const auto& k : clicks) {
      const bool fg = m.bits[k.pos[0] * 16 + k.pos[1]] != 0;
      CHECK(fg == (k.label > 0));
    }
  }
}

TEST_CASE("positive clicks always land on foreground, negative on background (1000 trials)") {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    BinaryMask m = mask2d(4 + rng.index(12), 4 + rng.index(12));
    for (auto& b : m.bits) b = rng.uniform() < 0.4 ? 1 : 0;
    if (m.empty_mask()) m.bits[rng.index(m.size())] = 1;
    if (m.count() == m.size()) m.bits[rng.index(m.size())] = 0;
    auto clicks = sample_random_clicks(m, 2, 2, rng.next_u64());
    const std::size_t W = m.extents[1];
    for (const auto& k : clicks) {
      const bool fg = m.bits[k.pos[0] * W + k.pos[1]] != 0;
      CHECK(fg == (k.label > 0));
    }
  }
}

TEST_CASE("clicks are deterministic per seed") {
  BinaryMask m = mask2d(12, 12);
  fill_rect(m, 2, 2, 9, 10);
  auto a = sample_random_clicks(m, 3, 1, 7);
  auto b = sample_random_clicks(m, 3, 1, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pos == b[i].pos);
    CHECK(a[i].label == b[i].label);
  }
}

TEST_CASE("iterative click: equal masks give nothing") {
  BinaryMask m = mask2d(8, 8);
  fill_rect(m, 1, 1, 4, 4);
  CHECK_FALSE(sample_iterative_click(m, m).has_value());
}

TEST_CASE("iterative click on an empty prediction hits the square center, +1") {
  BinaryMask gt = mask2d(9, 9);
  fill_rect(gt, 2, 2, 7, 7);  // 5x5 square, center (4,4)
  BinaryMask pred = mask2d(9, 9);
  auto k = sample_iterative_click(pred, gt);
  REQUIRE(k.has_value());
  CHECK(k->pos == std::vector<long>{4, 4});
  CHECK(k->label == 1);

  // cross-check with the independent distance-transform oracle
  auto dist = hop_distance_oracle(gt);
  long best = -1;
  for (auto d : dist) best = std::max(best, d);
  CHECK(dist[4 * 9 + 4] == best);
}

TEST_CASE("spurious blob in the prediction draws a negative click inside it") {
  BinaryMask gt = mask2d(12, 12);
  fill_rect(gt, 1, 1, 5, 5);
  BinaryMask pred = gt;
  fill_rect(pred, 8, 8, 11, 11);  // extra 3x3 blob
  auto k = sample_iterative_click(pred, gt);
  REQUIRE(k.has_value());
  CHECK(k->label == -1);
  CHECK(k->pos[0] >= 8);
  CHECK(k->pos[0] < 11);
  CHECK(k->pos[1] >= 8);
  CHECK(k->pos[1] < 11);
  CHECK(k->pos == std::vector<long>{9, 9});  // blob center
}

TEST_CASE("the click is always an error voxel and its label corrects it") {
  Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    BinaryMask gt = mask2d(10, 10), pred = mask2d(10, 10);
    for (auto& b : gt.bits) b = rng.uniform() < 0.35 ? 1 : 0;
    for (auto& b : pred.bits) b = rng.uniform() < 0.35 ? 1 : 0;
    auto k = sample_iterative_click(pred, gt);
    if (!k) {
      CHECK(gt.bits == pred.bits);
      continue;
    }
    const std::size_t i = k->pos[0] * 10 + k->pos[1];
    CHECK(gt.bits[i] != pred.bits[i]);
    if (k->label > 0) {
      CHECK(gt.bits[i] == 1);  // missed foreground
    } else {
      CHECK(pred.bits[i] == 1);  // spurious prediction
    }
  }
}

TEST_CASE("iterative click works on volumes") {
  BinaryMask gt({4, 8, 8});
  // small cube in slices 1..2
  for (long d = 1; d <= 2; ++d) {
    for (long r = 2; r < 5; ++r) {
      for (long c = 2; c < 5; ++c) gt.bits[(d * 8 + r) * 8 + c] = 1;
    }
  }
  BinaryMask pred({4, 8, 8});
  auto k = sample_iterative_click(pred, gt);
  REQUIRE(k.has_value());
  REQUIRE(k->pos.size() == 3);
  const auto [r, c, d] = std::tuple{k->pos[0], k->pos[1], k->pos[2]};
  CHECK(gt.bits[(d * 8 + r) * 8 + c] == 1);
  CHECK(k->label == 1);
}

TEST_CASE("shape mismatch raises") {
  BinaryMask a = mask2d(4, 4), b = mask2d(4, 5);
  CHECK_THROWS_AS(sample_iterative_click(a, b), PromptError);
}

TEST_CASE("overlap 1 returns the exact tight box") {
  BinaryMask m = mask2d(16, 16);
  fill_rect(m, 3, 5, 9, 12);
  BBox box = generate_bbox(m, 1.0, 99);
  CHECK(box.lo == std::vector<long>{3, 5});
  CHECK(box.hi == std::vector<long>{9, 12});
}

TEST_CASE("overlap 0.5 box lands in the declared IoU band") {
  BinaryMask m = mask2d(32, 32);
  fill_rect(m, 8, 8, 24, 24);  // 16x16 square
  const BBox tight = tight_bbox(m);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    BBox box = generate_bbox(m, 0.5, seed);
    const double v = box_iou(box, tight);
    CHECK(v >= 0.45);
    CHECK(v <= 0.55);
  }
}

TEST_CASE("bbox generation is deterministic per seed and overlap") {
  BinaryMask m = mask2d(32, 32);
  fill_rect(m, 10, 6, 20, 26);
  BBox a = generate_bbox(m, 0.75, 5);
  BBox b = generate_bbox(m, 0.75, 5);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  BBox c = generate_bbox(m, 0.75, 6);
  CHECK((c.lo != a.lo || c.hi != a.hi));
}

TEST_CASE("empty mask and unreachable bands raise") {
  BinaryMask empty = mask2d(8, 8);
  CHECK_THROWS_AS(generate_bbox(empty, 0.5, 0), PromptError);

  BinaryMask dot = mask2d(8, 8);
  dot.bits[0] = 1;  // 1x1 target: proposals can never reach IoU 0.1
  CHECK_THROWS_AS(generate_bbox(dot, 0.1, 0), PromptError);
}

TEST_CASE("encode: same position, opposite labels differ") {
  Rng rng(17);
  PromptEncoderParams pe;
  pe.embed_len = 16;
  auto embed = [&]() {
    std::vector<double> v(16);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return Tensor::from({16}, std::move(v));
  };
  pe.positive_click = embed();
  pe.negative_click = embed();
  pe.box_lo = embed();
  pe.box_hi = embed();

  PromptSet pos, neg;
  pos.clicks = {{{4, 5}, +1}};
  neg.clicks = {{{4, 5}, -1}};
  Tensor ep = encode_prompts(pos, pe, {16, 16});
  Tensor en = encode_prompts(neg, pe, {16, 16});
  CHECK(ep.data() != en.data());
}

TEST_CASE("encode: k clicks + box -> k+2 tokens") {
  Rng rng(19);
  PromptEncoderParams pe;
  pe.embed_len = 8;
  pe.positive_click = Tensor::zeros({8});
  pe.negative_click = Tensor::zeros({8});
  pe.box_lo = Tensor::zeros({8});
  pe.box_hi = Tensor::zeros({8});
  PromptSet p;
  p.clicks = {{{1, 2}, 1}, {{3, 4}, -1}, {{5, 6}, 1}};
  p.box = BBox{{2, 2}, {6, 7}};
  Tensor e = encode_prompts(p, pe, {8, 8});
  CHECK(e.shape() == Shape{5, 8});
}

TEST_CASE("translation changes only the positional summand") {
  PromptEncoderParams pe;
  pe.embed_len = 16;
  pe.positive_click = Tensor::from({16}, std::vector<double>(16, 0.25));
  pe.negative_click = Tensor::zeros({16});
  pe.box_lo = Tensor::zeros({16});
  pe.box_hi = Tensor::zeros({16});

  PromptSet a, b;
  a.clicks = {{{2, 3}, 1}};
  b.clicks = {{{9, 12}, 1}};
  Tensor ea = encode_prompts(a, pe, {16, 16});
  Tensor eb = encode_prompts(b, pe, {16, 16});

  auto pa = positional_encoding({2, 3}, {16, 16}, 16);
  auto pb = positional_encoding({9, 12}, {16, 16}, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(ea.data()[i] - pa[i] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(eb.data()[i] - pb[i] == doctest::Approx(0.25).epsilon(1e-14));
  }
}

TEST_CASE("degenerate prompt sets are rejected") {
  PromptEncoderParams pe;
  pe.embed_len = 8;
  pe.positive_click = Tensor::zeros({8});
  pe.negative_click = Tensor::zeros({8});
  pe.box_lo = Tensor::zeros({8});
  pe.box_hi = Tensor::zeros({8});
  PromptSet p;
  CHECK_THROWS_AS(encode_prompts(p, pe, {8, 8}), PromptError);
}
