#include "pseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pseg {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

using detail::Storage;

std::shared_ptr<Storage> make_storage(Shape shape, std::vector<double> value, bool rg) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->value = std::move(value);
  s->requires_grad = rg;
  return s;
}

std::vector<double>& grad_buf(Storage& s) {
  if (s.grad.empty()) s.grad.assign(s.value.size(), 0.0);
  return s.grad;
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    if (t.requires_grad()) return true;
  }
  return false;
}

// b-is-suffix-of-a test for trailing-aligned broadcasting.
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::size_t stride_product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

// ---- matmul kernels (row-major) --------------------------------------------

void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
void mm_acc_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void mm_acc_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

// ---- generic binary elementwise with suffix broadcast ----------------------

template <class FV, class FDA, class FDB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, FV fv, FDA fda, FDB fdb,
                          const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool b_small;
  if (sa == sb) {
    b_small = true;
  } else if (is_suffix(sb, sa)) {
    b_small = true;
  } else if (is_suffix(sa, sb)) {
    b_small = false;
  } else {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                     " do not align");
  }
  const Tensor& big = b_small ? a : b;
  const Tensor& small = b_small ? b : a;
  const std::size_t ns = small.size();
  const std::size_t nb = big.size();

  std::vector<double> out(nb);
  {
    const auto& bv = big.data();
    const auto& sv = small.data();
    for (std::size_t i = 0; i < nb; ++i) {
      const double av = b_small ? bv[i] : sv[i % ns];
      const double bw = b_small ? sv[i % ns] : bv[i];
      out[i] = fv(av, bw);
    }
  }
  Tensor result(Tensor::from(big.shape(), std::move(out)));
  if (any_requires_grad({a, b})) {
    auto as = a.state();
    auto bs = b.state();
    auto os = result.state();
    bool bsm = b_small;
    std::size_t nsm = ns;
    Tape::active().record({a, b}, result, [as, bs, os, fda, fdb, bsm, nsm]() {
      const auto& og = os->grad;
      if (og.empty()) return;
      const auto& av = as->value;
      const auto& bv = bs->value;
      const std::size_t n = os->value.size();
      if (as->requires_grad) {
        auto& ga = grad_buf(*as);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = bsm ? av[i] : av[i % nsm];
          const double y = bsm ? bv[i % nsm] : bv[i];
          ga[bsm ? i : i % nsm] += fda(og[i], x, y);
        }
      }
      if (bs->requires_grad) {
        auto& gb = grad_buf(*bs);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = bsm ? av[i] : av[i % nsm];
          const double y = bsm ? bv[i % nsm] : bv[i];
          gb[bsm ? i % nsm : i] += fdb(og[i], x, y);
        }
      }
    });
  }
  return result;
}

template <class FV, class FD>
Tensor unary_elementwise(const Tensor& x, FV fv, FD fd) {
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fv(xv[i]);
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os, fd]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      const auto& xv = xs->value;
      const auto& yv = os->value;
      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += fd(og[i], xv[i], yv[i]);
    });
  }
  return result;
}

void check_axis(const Tensor& x, std::size_t axis, const char* name) {
  if (axis >= x.ndim()) {
    throw ShapeError(std::string(name) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_storage({}, {v}, requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return Tensor(make_storage(std::move(shape), std::move(data), requires_grad));
}

std::vector<double>& Tensor::grad() { return grad_buf(*s_); }

void Tensor::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return s_->value[0];
}

// ---- Tape ------------------------------------------------------------------

Tape& Tape::active() {
  static Tape tape;
  return tape;
}

void Tape::record(const std::vector<Tensor>& inputs, Tensor& output,
                  std::function<void()> backward) {
  Entry e;
  e.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto& st = *in.state();
    if (st.node < 0) st.node = next_id_++;
    e.inputs.push_back(st.node);
  }
  auto& out = *output.state();
  out.node = next_id_++;
  out.requires_grad = true;
  e.output = out.node;
  e.fn = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw GraphError("backward: loss must be scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (loss.state()->node < 0) {
    throw GraphError("backward: loss is not on the tape");
  }
  grad_buf(*loss.state())[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
}

void Tape::clear() { entries_.clear(); }

// ---- elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); }, "div");
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double g, double, double) { return c * g; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  return unary_elementwise(
      x,
      [](double v) {
        const double u = kGeluC * (v + kGeluA * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
      },
      [](double g, double v, double) {
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        return g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor map_unary(const Tensor& x, std::function<double(double)> f,
                 std::function<double(double)> df) {
  return unary_elementwise(
      x, [&f](double v) { return f(v); },
      [df](double g, double v, double) { return g * df(v); });
}

// ---- structural ops --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const std::size_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != k2) {
    throw ShapeError("matmul: cannot contract " + shape_str(sa) + " with " + shape_str(sb));
  }
  Shape lead_a(sa.begin(), sa.end() - 2);
  Shape lead_b(sb.begin(), sb.end() - 2);
  bool bc_a = false, bc_b = false;  // operand is shared across the batch
  Shape lead;
  if (lead_a == lead_b) {
    lead = lead_a;
  } else if (lead_a.empty()) {
    lead = lead_b;
    bc_a = true;
  } else if (lead_b.empty()) {
    lead = lead_a;
    bc_b = true;
  } else {
    throw ShapeError("matmul: leading axes of " + shape_str(sa) + " and " + shape_str(sb) +
                     " do not match");
  }
  const std::size_t batch = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n);
  {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (std::size_t t = 0; t < batch; ++t) {
      mm_nn(av + (bc_a ? 0 : t * m * k), bv + (bc_b ? 0 : t * k * n), out.data() + t * m * n, m,
            k, n);
    }
  }
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (any_requires_grad({a, b})) {
    auto as = a.state();
    auto bs = b.state();
    auto os = result.state();
    Tape::active().record({a, b}, result, [as, bs, os, batch, m, k, n, bc_a, bc_b]() {
      const auto& og = os->grad;
      if (og.empty()) return;
      const double* av = as->value.data();
      const double* bv = bs->value.data();
      if (as->requires_grad) {
        double* ga = grad_buf(*as).data();
        for (std::size_t t = 0; t < batch; ++t) {
          mm_acc_nt(og.data() + t * m * n, bv + (bc_b ? 0 : t * k * n),
                    ga + (bc_a ? 0 : t * m * k), m, n, k);
        }
      }
      if (bs->requires_grad) {
        double* gb = grad_buf(*bs).data();
        for (std::size_t t = 0; t < batch; ++t) {
          mm_acc_tn(av + (bc_a ? 0 : t * m * k), og.data() + t * m * n,
                    gb + (bc_b ? 0 : t * k * n), m, k, n);
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& sx = x.shape();
  const std::size_t r = sx.size();
  if (perm.size() != r) {
    throw ShapeError("transpose: permutation length " + std::to_string(perm.size()) +
                     " does not match rank of " + shape_str(sx));
  }
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation for " + shape_str(sx));
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = sx[perm[i]];

  // out-linear stride contributed by each *input* axis
  std::vector<std::size_t> ostride(r, 1);
  {
    std::vector<std::size_t> stride_out(r, 1);
    for (std::size_t i = r; i-- > 1;) stride_out[i - 1] = stride_out[i] * out_shape[i];
    for (std::size_t j = 0; j < r; ++j) ostride[perm[j]] = stride_out[j];
  }

  const std::size_t total = x.size();
  std::vector<double> out(total);
  std::vector<std::size_t> pos_map;  // in-linear -> out-linear, reused by backward
  pos_map.resize(total);
  {
    std::vector<std::size_t> idx(r, 0);
    const auto& xv = x.data();
    std::size_t opos = 0;
    for (std::size_t i = 0; i < total; ++i) {
      pos_map[i] = opos;
      out[opos] = xv[i];
      for (std::size_t ax = r; ax-- > 0;) {  // odometer increment
        opos += ostride[ax];
        if (++idx[ax] < sx[ax]) break;
        opos -= ostride[ax] * sx[ax];
        idx[ax] = 0;
      }
    }
  }
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    auto map = std::make_shared<std::vector<std::size_t>>(std::move(pos_map));
    Tape::active().record({x}, result, [xs, os, map]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += og[(*map)[i]];
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor result = Tensor::from(std::move(shape), x.data());
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += og[i];
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  check_axis(parts[0], axis, "concat");
  Shape out_shape = s0;
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    const Shape& sp = p.shape();
    if (sp.size() != s0.size()) {
      throw ShapeError("concat: rank mismatch between " + shape_str(s0) + " and " + shape_str(sp));
    }
    for (std::size_t i = 0; i < sp.size(); ++i) {
      if (i != axis && sp[i] != s0[i]) {
        throw ShapeError("concat: extent mismatch between " + shape_str(s0) + " and " +
                         shape_str(sp) + " outside axis " + std::to_string(axis));
      }
    }
    axis_total += sp[axis];
  }
  out_shape[axis] = axis_total;

  const std::size_t outer = stride_product(s0, 0, axis);
  const std::size_t inner = stride_product(s0, axis + 1, s0.size());
  std::vector<double> out(numel(out_shape));
  {
    std::size_t base = 0;
    for (const auto& p : parts) {
      const std::size_t chunk = p.extent(axis) * inner;
      const auto& pv = p.data();
      for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * axis_total * inner + base, pv.data() + o * chunk,
                    chunk * sizeof(double));
      }
      base += chunk;
    }
  }
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (any_requires_grad(parts)) {
    std::vector<std::shared_ptr<Storage>> srcs;
    std::vector<std::size_t> chunks;
    for (const auto& p : parts) {
      srcs.push_back(p.state());
      chunks.push_back(p.extent(axis) * inner);
    }
    auto os = result.state();
    const std::size_t row = axis_total * inner;
    Tape::active().record(parts, result, [srcs, chunks, os, outer, row]() {
      const auto& og = os->grad;
      if (og.empty()) return;
      std::size_t base = 0;
      for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
        if (srcs[pi]->requires_grad) {
          auto& g = grad_buf(*srcs[pi]);
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = og.data() + o * row + base;
            double* dst = g.data() + o * chunks[pi];
            for (std::size_t i = 0; i < chunks[pi]; ++i) dst[i] += src[i];
          }
        }
        base += chunks[pi];
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  check_axis(x, axis, "slice");
  const Shape& sx = x.shape();
  if (len == 0 || start + len > sx[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " + shape_str(sx) +
                     " axis " + std::to_string(axis));
  }
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  const std::size_t row = sx[axis] * inner;
  const std::size_t chunk = len * inner;
  Shape out_shape = sx;
  out_shape[axis] = len;
  std::vector<double> out(outer * chunk);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * chunk, xv.data() + o * row + start * inner,
                chunk * sizeof(double));
  }
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os, outer, row, chunk, start, inner]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = og.data() + o * chunk;
        double* dst = gx.data() + o * row + start * inner;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

// ---- axis reductions / normalizations ---------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const Shape& sx = x.shape();
  const std::size_t len = sx[axis];
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = xv[base];
      for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, xv[base + a * inner]);
      double s = 0.0;
      for (std::size_t a = 0; a < len; ++a) {
        const double e = std::exp(xv[base + a * inner] - mx);
        out[base + a * inner] = e;
        s += e;
      }
      const double invs = 1.0 / s;
      for (std::size_t a = 0; a < len; ++a) out[base + a * inner] *= invs;
    }
  }
  Tensor result = Tensor::from(sx, std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os, outer, len, inner]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      const auto& yv = os->value;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::size_t a = 0; a < len; ++a) {
            dot += og[base + a * inner] * yv[base + a * inner];
          }
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t p = base + a * inner;
            gx[p] += yv[p] * (og[p] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor standardize(const Tensor& x, std::size_t axis, double eps) {
  check_axis(x, axis, "standardize");
  if (!(eps > 0.0)) throw ShapeError("standardize: eps must be positive");
  const Shape& sx = x.shape();
  const std::size_t len = sx[axis];
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  std::vector<double> out(x.size());
  std::vector<double> inv_std(outer * inner);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mean = 0.0;
      for (std::size_t a = 0; a < len; ++a) mean += xv[base + a * inner];
      mean /= static_cast<double>(len);
      double var = 0.0;
      for (std::size_t a = 0; a < len; ++a) {
        const double d = xv[base + a * inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(len);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[o * inner + i] = inv;
      for (std::size_t a = 0; a < len; ++a) {
        out[base + a * inner] = (xv[base + a * inner] - mean) * inv;
      }
    }
  }
  Tensor result = Tensor::from(sx, std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    auto inv = std::make_shared<std::vector<double>>(std::move(inv_std));
    Tape::active().record({x}, result, [xs, os, inv, outer, len, inner]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      const auto& yv = os->value;
      const double nl = static_cast<double>(len);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * len * inner + i;
          double mg = 0.0, mgy = 0.0;
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t p = base + a * inner;
            mg += og[p];
            mgy += og[p] * yv[p];
          }
          mg /= nl;
          mgy /= nl;
          const double s = (*inv)[o * inner + i];
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t p = base + a * inner;
            gx[p] += s * (og[p] - mg - yv[p] * mgy);
          }
        }
      }
    });
  }
  return result;
}

Tensor mul_axis(const Tensor& x, const Tensor& v, std::size_t axis) {
  check_axis(x, axis, "mul_axis");
  if (v.ndim() != 1 || v.extent(0) != x.extent(axis)) {
    throw ShapeError("mul_axis: vector " + shape_str(v.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const Shape& sx = x.shape();
  const std::size_t len = sx[axis];
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  const auto& vv = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const std::size_t base = (o * len + a) * inner;
      const double w = vv[a];
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] * w;
    }
  }
  Tensor result = Tensor::from(sx, std::move(out));
  if (any_requires_grad({x, v})) {
    auto xs = x.state();
    auto vs = v.state();
    auto os = result.state();
    Tape::active().record({x, v}, result, [xs, vs, os, outer, len, inner]() {
      const auto& og = os->grad;
      if (og.empty()) return;
      const auto& xv = xs->value;
      const auto& vv = vs->value;
      if (xs->requires_grad) {
        auto& gx = grad_buf(*xs);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t base = (o * len + a) * inner;
            for (std::size_t i = 0; i < inner; ++i) gx[base + i] += og[base + i] * vv[a];
          }
        }
      }
      if (vs->requires_grad) {
        auto& gv = grad_buf(*vs);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t base = (o * len + a) * inner;
            double acc = 0.0;
            for (std::size_t i = 0; i < inner; ++i) acc += og[base + i] * xv[base + i];
            gv[a] += acc;
          }
        }
      }
    });
  }
  return result;
}

Tensor add_axis(const Tensor& x, const Tensor& v, std::size_t axis) {
  check_axis(x, axis, "add_axis");
  if (v.ndim() != 1 || v.extent(0) != x.extent(axis)) {
    throw ShapeError("add_axis: vector " + shape_str(v.shape()) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const Shape& sx = x.shape();
  const std::size_t len = sx[axis];
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  std::vector<double> out(x.size());
  const auto& xv = x.data();
  const auto& vv = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const std::size_t base = (o * len + a) * inner;
      const double w = vv[a];
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] + w;
    }
  }
  Tensor result = Tensor::from(sx, std::move(out));
  if (any_requires_grad({x, v})) {
    auto xs = x.state();
    auto vs = v.state();
    auto os = result.state();
    Tape::active().record({x, v}, result, [xs, vs, os, outer, len, inner]() {
      const auto& og = os->grad;
      if (og.empty()) return;
      if (xs->requires_grad) {
        auto& gx = grad_buf(*xs);
        for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
      }
      if (vs->requires_grad) {
        auto& gv = grad_buf(*vs);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t a = 0; a < len; ++a) {
            const std::size_t base = (o * len + a) * inner;
            double acc = 0.0;
            for (std::size_t i = 0; i < inner; ++i) acc += og[base + i];
            gv[a] += acc;
          }
        }
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  return add_axis(mul_axis(standardize(x, axis, eps), gamma, axis), beta, axis);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor result = Tensor::scalar(s);
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += og[0];
    });
  }
  return result;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean_axis");
  const Shape& sx = x.shape();
  const std::size_t len = sx[axis];
  const std::size_t outer = stride_product(sx, 0, axis);
  const std::size_t inner = stride_product(sx, axis + 1, sx.size());
  Shape out_shape;
  for (std::size_t i = 0; i < sx.size(); ++i) {
    if (i != axis) out_shape.push_back(sx[i]);
  }
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.data();
  const double invn = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const std::size_t base = (o * len + a) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[base + i];
    }
  }
  for (auto& v : out) v *= invn;
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    Tape::active().record({x}, result, [xs, os, outer, len, inner, invn]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < len; ++a) {
          const std::size_t base = (o * len + a) * inner;
          for (std::size_t i = 0; i < inner; ++i) gx[base + i] += og[o * inner + i] * invn;
        }
      }
    });
  }
  return result;
}

// ---- bilinear upsampling ----------------------------------------------------

namespace {
struct LinTap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<LinTap> bilinear_taps(std::size_t in_len) {
  std::vector<LinTap> taps(in_len * 2);
  for (std::size_t o = 0; o < in_len * 2; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    const double lim = static_cast<double>(in_len - 1);
    if (src > lim) src = lim;
    const std::size_t i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, in_len - 1);
    const double f = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}
}  // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
  if (x.ndim() < 2) {
    throw ShapeError("upsample_bilinear2x: need at least 2 axes, got " + shape_str(x.shape()));
  }
  const Shape& sx = x.shape();
  const std::size_t W = sx[sx.size() - 1];
  const std::size_t H = sx[sx.size() - 2];
  const std::size_t batch = x.size() / (H * W);
  Shape out_shape = sx;
  out_shape[sx.size() - 2] = 2 * H;
  out_shape[sx.size() - 1] = 2 * W;

  const auto rt = bilinear_taps(H);
  const auto ct = bilinear_taps(W);
  std::vector<double> out(batch * 4 * H * W);
  const auto& xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * H * W;
    double* dst = out.data() + b * 4 * H * W;
    for (std::size_t o = 0; o < 2 * H; ++o) {
      const auto& r = rt[o];
      for (std::size_t p = 0; p < 2 * W; ++p) {
        const auto& c = ct[p];
        dst[o * 2 * W + p] = r.w0 * (c.w0 * src[r.i0 * W + c.i0] + c.w1 * src[r.i0 * W + c.i1]) +
                             r.w1 * (c.w0 * src[r.i1 * W + c.i0] + c.w1 * src[r.i1 * W + c.i1]);
      }
    }
  }
  Tensor result = Tensor::from(std::move(out_shape), std::move(out));
  if (x.requires_grad()) {
    auto xs = x.state();
    auto os = result.state();
    auto rts = std::make_shared<std::vector<LinTap>>(rt);
    auto cts = std::make_shared<std::vector<LinTap>>(ct);
    Tape::active().record({x}, result, [xs, os, rts, cts, batch, H, W]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* g = og.data() + b * 4 * H * W;
        double* dst = gx.data() + b * H * W;
        for (std::size_t o = 0; o < 2 * H; ++o) {
          const auto& r = (*rts)[o];
          for (std::size_t p = 0; p < 2 * W; ++p) {
            const auto& c = (*cts)[p];
            const double gv = g[o * 2 * W + p];
            dst[r.i0 * W + c.i0] += gv * r.w0 * c.w0;
            dst[r.i0 * W + c.i1] += gv * r.w0 * c.w1;
            dst[r.i1 * W + c.i0] += gv * r.w1 * c.w0;
            dst[r.i1 * W + c.i1] += gv * r.w1 * c.w1;
          }
        }
      }
    });
  }
  return result;
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("bce_with_logits_mean: logits " + shape_str(logits.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const auto& xv = logits.data();
  const auto& tv = target.data();
  const std::size_t n = xv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = xv[i];
    acc += std::max(x, 0.0) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor result = Tensor::scalar(acc / static_cast<double>(n));
  if (logits.requires_grad()) {
    auto xs = logits.state();
    auto ts = target.state();
    auto os = result.state();
    Tape::active().record({logits}, result, [xs, ts, os, n]() {
      const auto& og = os->grad;
      if (og.empty() || !xs->requires_grad) return;
      auto& gx = grad_buf(*xs);
      const auto& xv = xs->value;
      const auto& tv = ts->value;
      const double s = og[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = xv[i];
        double sig;
        if (x >= 0.0) {
          sig = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double e = std::exp(x);
          sig = e / (1.0 + e);
        }
        gx[i] += s * (sig - tv[i]);
      }
    });
  }
  return result;
}

}  // namespace pseg
