#include "pseg/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "pseg/rng.hpp"

namespace pseg {

namespace {

struct Grid {
  long D, H, W;
  bool is3d;
};

Grid grid_of(const BinaryMask& m) {
  if (m.ndim() == 2) return {1, static_cast<long>(m.extents[0]), static_cast<long>(m.extents[1]), false};
  if (m.ndim() == 3) {
    return {static_cast<long>(m.extents[0]), static_cast<long>(m.extents[1]),
            static_cast<long>(m.extents[2]), true};
  }
  throw PromptError("masks must be 2D or 3D, got " + extents_str(m.extents));
}

std::size_t lin(const Grid& g, long d, long r, long c) {
  return static_cast<std::size_t>((d * g.H + r) * g.W + c);
}

Click click_at(const Grid& g, long d, long r, long c, int label) {
  Click k;
  k.pos = g.is3d ? std::vector<long>{r, c, d} : std::vector<long>{r, c};
  k.label = label;
  return k;
}

}  // namespace

std::vector<Click> sample_random_clicks(const BinaryMask& gt, int n_pos, int n_neg,
                                        std::uint64_t seed) {
  const Grid g = grid_of(gt);
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < gt.size(); ++i) (gt.bits[i] ? fg : bg).push_back(i);
  if (n_pos > 0 && fg.empty()) {
    throw PromptError("sample_random_clicks: foreground is empty");
  }
  if (n_neg > 0 && bg.empty()) {
    throw PromptError("sample_random_clicks: background is empty");
  }
  Rng rng(seed);
  std::vector<Click> out;
  out.reserve(static_cast<std::size_t>(std::max(n_pos, 0) + std::max(n_neg, 0)));
  for (int i = 0; i < n_pos; ++i) {
    const std::size_t v = fg[rng.index(fg.size())];
    const long d = static_cast<long>(v) / (g.H * g.W);
    const long r = (static_cast<long>(v) / g.W) % g.H;
    const long c = static_cast<long>(v) % g.W;
    out.push_back(click_at(g, d, r, c, +1));
  }
  for (int i = 0; i < n_neg; ++i) {
    const std::size_t v = bg[rng.index(bg.size())];
    const long d = static_cast<long>(v) / (g.H * g.W);
    const long r = (static_cast<long>(v) / g.W) % g.H;
    const long c = static_cast<long>(v) % g.W;
    out.push_back(click_at(g, d, r, c, -1));
  }
  return out;
}

namespace {

// Connected component over the set marked in `in_set`, 4/6-neighborhood.
struct Component {
  std::vector<std::size_t> voxels;
  std::array<long, 3> first{0, 0, 0};  // (r, c, d) of first scanned voxel
};

std::vector<Component> components(const Grid& g, const std::vector<std::uint8_t>& in_set) {
  std::vector<std::uint8_t> seen(in_set.size(), 0);
  std::vector<Component> comps;
  for (long d = 0; d < g.D; ++d) {
    for (long r = 0; r < g.H; ++r) {
      for (long c = 0; c < g.W; ++c) {
        const std::size_t start = lin(g, d, r, c);
        if (!in_set[start] || seen[start]) continue;
        Component comp;
        comp.first = {r, c, d};
        std::deque<std::array<long, 3>> queue{{d, r, c}};
        seen[start] = 1;
        while (!queue.empty()) {
          const auto [cd, cr, cc] = queue.front();
          queue.pop_front();
          comp.voxels.push_back(lin(g, cd, cr, cc));
          const long nbrs[6][3] = {{cd, cr - 1, cc}, {cd, cr + 1, cc}, {cd, cr, cc - 1},
                                   {cd, cr, cc + 1}, {cd - 1, cr, cc}, {cd + 1, cr, cc}};
          const int n_nbrs = g.is3d ? 6 : 4;
          for (int i = 0; i < n_nbrs; ++i) {
            const long nd = nbrs[i][0], nr = nbrs[i][1], nc = nbrs[i][2];
            if (nd < 0 || nd >= g.D || nr < 0 || nr >= g.H || nc < 0 || nc >= g.W) continue;
            const std::size_t ni = lin(g, nd, nr, nc);
            if (in_set[ni] && !seen[ni]) {
              seen[ni] = 1;
              queue.push_back({nd, nr, nc});
            }
          }
        }
        comps.push_back(std::move(comp));
      }
    }
  }
  return comps;
}

}  // namespace

std::optional<Click> sample_iterative_click(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.extents != gt.extents) {
    throw PromptError("sample_iterative_click: extent mismatch " + extents_str(pred.extents) +
                      " vs " + extents_str(gt.extents));
  }
  const Grid g = grid_of(gt);
  std::vector<std::uint8_t> fn(gt.size()), fp(gt.size());
  bool any = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    fn[i] = static_cast<std::uint8_t>(gt.bits[i] && !pred.bits[i]);
    fp[i] = static_cast<std::uint8_t>(pred.bits[i] && !gt.bits[i]);
    any = any || fn[i] || fp[i];
  }
  if (!any) return std::nullopt;

  auto fn_comps = components(g, fn);
  auto fp_comps = components(g, fp);

  const Component* best = nullptr;
  int best_label = 0;
  auto consider = [&](const Component& comp, int label) {
    if (!best || comp.voxels.size() > best->voxels.size() ||
        (comp.voxels.size() == best->voxels.size() && comp.first < best->first)) {
      best = &comp;
      best_label = label;
    }
  };
  for (const auto& comp : fn_comps) consider(comp, +1);
  for (const auto& comp : fp_comps) consider(comp, -1);

  // hop-distance transform from the component's own boundary, inward
  std::vector<std::uint8_t> in_comp(gt.size(), 0);
  for (auto v : best->voxels) in_comp[v] = 1;
  std::vector<long> dist(gt.size(), -1);
  std::deque<std::size_t> queue;
  auto coords = [&](std::size_t v) {
    const long d = static_cast<long>(v) / (g.H * g.W);
    const long r = (static_cast<long>(v) / g.W) % g.H;
    const long c = static_cast<long>(v) % g.W;
    return std::array<long, 3>{d, r, c};
  };
  auto neighbors = [&](std::size_t v, auto&& fn_nbr) {
    const auto [d, r, c] = coords(v);
    const long nbrs[6][3] = {{d, r - 1, c}, {d, r + 1, c}, {d, r, c - 1},
                             {d, r, c + 1}, {d - 1, r, c}, {d + 1, r, c}};
    const int n_nbrs = g.is3d ? 6 : 4;
    for (int i = 0; i < n_nbrs; ++i) {
      fn_nbr(nbrs[i][0], nbrs[i][1], nbrs[i][2]);
    }
  };
  for (auto v : best->voxels) {
    bool edge = false;
    neighbors(v, [&](long nd, long nr, long nc) {
      if (nd < 0 || nd >= g.D || nr < 0 || nr >= g.H || nc < 0 || nc >= g.W ||
          !in_comp[lin(g, nd, nr, nc)]) {
        edge = true;
      }
    });
    if (edge) {
      dist[v] = 0;
      queue.push_back(v);
    }
  }
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    neighbors(v, [&](long nd, long nr, long nc) {
      if (nd < 0 || nd >= g.D || nr < 0 || nr >= g.H || nc < 0 || nc >= g.W) return;
      const std::size_t ni = lin(g, nd, nr, nc);
      if (in_comp[ni] && dist[ni] < 0) {
        dist[ni] = dist[v] + 1;
        queue.push_back(ni);
      }
    });
  }

  std::size_t pick = best->voxels.front();
  long pick_dist = -1;
  std::array<long, 3> pick_coord{};  // (r, c, d) for tie ordering
  for (auto v : best->voxels) {
    const auto [d, r, c] = coords(v);
    const std::array<long, 3> key{r, c, d};
    if (dist[v] > pick_dist || (dist[v] == pick_dist && key < pick_coord)) {
      pick = v;
      pick_dist = dist[v];
      pick_coord = key;
    }
  }
  const auto [d, r, c] = coords(pick);
  return click_at(g, d, r, c, best_label);
}

double box_iou(const BBox& a, const BBox& b) {
  double inter = 1.0;
  for (std::size_t i = 0; i < a.lo.size(); ++i) {
    const long lo = std::max(a.lo[i], b.lo[i]);
    const long hi = std::min(a.hi[i], b.hi[i]);
    if (hi <= lo) return 0.0;
    inter *= static_cast<double>(hi - lo);
  }
  return inter / (a.volume() + b.volume() - inter);
}

BBox tight_bbox(const BinaryMask& gt) {
  const Grid g = grid_of(gt);
  if (gt.empty_mask()) throw PromptError("tight_bbox: mask is empty");
  const std::size_t n_ax = g.is3d ? 3 : 2;
  BBox box;
  box.lo.assign(n_ax, std::numeric_limits<long>::max());
  box.hi.assign(n_ax, std::numeric_limits<long>::min());
  for (long d = 0; d < g.D; ++d) {
    for (long r = 0; r < g.H; ++r) {
      for (long c = 0; c < g.W; ++c) {
        if (!gt.bits[lin(g, d, r, c)]) continue;
        const long coord[3] = {r, c, d};
        for (std::size_t ax = 0; ax < n_ax; ++ax) {
          box.lo[ax] = std::min(box.lo[ax], coord[ax]);
          box.hi[ax] = std::max(box.hi[ax], coord[ax] + 1);
        }
      }
    }
  }
  return box;
}

BBox generate_bbox(const BinaryMask& gt, double overlap, std::uint64_t seed) {
  if (!(overlap > 0.0 && overlap <= 1.0)) {
    throw PromptError("generate_bbox: overlap must be in (0,1]");
  }
  if (gt.empty_mask()) throw PromptError("generate_bbox: mask is empty");
  const Grid g = grid_of(gt);
  const BBox tight = tight_bbox(gt);
  if (overlap == 1.0) return tight;

  const std::size_t n_ax = tight.lo.size();
  const long ext[3] = {g.H, g.W, g.D};  // in (row, col, depth) axis order
  Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(overlap * 1e6)));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    BBox box;
    box.lo.resize(n_ax);
    box.hi.resize(n_ax);
    bool ok = true;
    for (std::size_t ax = 0; ax < n_ax; ++ax) {
      const double span = static_cast<double>(tight.span(ax));
      const double center = 0.5 * static_cast<double>(tight.lo[ax] + tight.hi[ax]) +
                            rng.uniform(-0.5, 0.5) * span;
      const double new_span = std::max(1.0, std::round(span * rng.uniform(0.55, 1.8)));
      long lo = static_cast<long>(std::llround(center - 0.5 * new_span));
      long hi = lo + static_cast<long>(new_span);
      lo = std::max(lo, 0L);
      hi = std::min(hi, ext[ax]);
      if (hi <= lo) {
        ok = false;
        break;
      }
      box.lo[ax] = lo;
      box.hi[ax] = hi;
    }
    if (!ok) continue;
    const double v = box_iou(box, tight);
    if (v >= overlap - 0.05 && v <= overlap + 0.05) return box;
  }
  throw PromptError("generate_bbox: no box within overlap band after 1000 draws");
}

std::vector<double> positional_encoding(const std::vector<double>& coords,
                                        const std::vector<double>& extents, std::size_t len) {
  const std::size_t n_ax = coords.size();
  std::vector<double> out(len, 0.0);
  const std::size_t block = len / n_ax;
  const std::size_t pairs = block / 2;
  for (std::size_t ax = 0; ax < n_ax; ++ax) {
    const double x = (coords[ax] + 0.5) / extents[ax];
    for (std::size_t j = 0; j < pairs; ++j) {
      // frequencies log-spaced from pi up to extent*pi
      const double t = pairs > 1 ? static_cast<double>(j) / static_cast<double>(pairs - 1) : 0.0;
      const double freq = 3.14159265358979323846 * std::pow(extents[ax], t);
      out[ax * block + 2 * j] = std::sin(x * freq);
      out[ax * block + 2 * j + 1] = std::cos(x * freq);
    }
  }
  return out;
}

Tensor encode_prompts(const PromptSet& p, const PromptEncoderParams& params,
                      const std::vector<std::size_t>& mask_extents) {
  if (p.degenerate()) {
    throw PromptError("encode_prompts: prompt set has neither clicks nor a box");
  }
  const std::size_t len = params.embed_len;
  const bool is3d = mask_extents.size() == 3;
  // extents in (row, col[, depth]) order to match click coordinates
  std::vector<double> ext;
  if (is3d) {
    ext = {static_cast<double>(mask_extents[1]), static_cast<double>(mask_extents[2]),
           static_cast<double>(mask_extents[0])};
  } else {
    ext = {static_cast<double>(mask_extents[0]), static_cast<double>(mask_extents[1])};
  }

  std::vector<Tensor> rows;
  auto token = [&](const std::vector<double>& coords, const Tensor& type_embed) {
    Tensor pe = Tensor::from({len}, positional_encoding(coords, ext, len));
    rows.push_back(reshape(add(pe, type_embed), {1, len}));
  };
  for (const auto& k : p.clicks) {
    std::vector<double> coords(k.pos.begin(), k.pos.end());
    token(coords, k.label > 0 ? params.positive_click : params.negative_click);
  }
  if (p.box) {
    std::vector<double> lo(p.box->lo.begin(), p.box->lo.end());
    std::vector<double> hi(p.box->hi.begin(), p.box->hi.end());
    token(lo, params.box_lo);
    token(hi, params.box_hi);
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

}  // namespace pseg
