#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation; value.size() after
  std::int64_t node = -1;    // id on the active tape, -1 = never recorded
};
}  // namespace detail

/// Dense row-major f64 tensor. Copies share storage; the value is immutable
/// after creation except through mutable_data() (leaf init / optimizer steps)
/// and the grad slot.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t ndim() const { return s_->shape.size(); }
  std::size_t size() const { return s_->value.size(); }
  std::size_t extent(std::size_t axis) const { return s_->shape.at(axis); }

  const std::vector<double>& data() const { return s_->value; }
  /// Direct write access. Only meaningful on leaves; writing to a tensor that
  /// already participates in a recorded graph invalidates that graph.
  std::vector<double>& mutable_data() { return s_->value; }

  bool requires_grad() const { return s_->requires_grad; }
  /// Gradient buffer, zero-initialized on first access.
  std::vector<double>& grad();
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad();

  double item() const;

  /// Internal storage handle. Used by op implementations and the tape.
  const std::shared_ptr<detail::Storage>& state() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
  std::shared_ptr<detail::Storage> s_;
  friend class Tape;
};

/// Recorded reverse-mode graph. Node ids are assigned in creation order, so
/// iterating entries back-to-front is a reverse topological sweep that visits
/// each recorded op exactly once.
class Tape {
 public:
  static Tape& active();

  /// Records one op. Inputs get node ids on first use; the output is stamped
  /// with a fresh id and marked requires_grad. The closure must add the
  /// output-grad contribution into each differentiable input's grad buffer.
  void record(const std::vector<Tensor>& inputs, Tensor& output, std::function<void()> backward);

  /// Propagates d(loss)/d(x) into the grad buffer of every requires_grad
  /// tensor reachable from `loss`. Accumulates (sums) into whatever the
  /// buffers already hold; callers reset grads between steps.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<std::int64_t> inputs;
    std::int64_t output;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  std::int64_t next_id_ = 0;
};

// ---- elementwise / structural ops ------------------------------------------
// Binary elementwise ops align shapes from the trailing side: operands must
// match exactly or one operand's shape must be a suffix of the other's (it is
// then broadcast over the leading axes).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// Batched matrix product on the trailing two axes. Leading axes must match
/// exactly, or one operand may be rank-2 (broadcast across the other's batch).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Explicit-copy axis permutation.
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Per-slice (x - mean) / sqrt(var + eps) along `axis`; population variance,
/// no affine.
Tensor standardize(const Tensor& x, std::size_t axis, double eps = 1e-5);
/// standardize followed by a per-element affine along `axis`; gamma/beta are
/// rank-1 with length extent(axis).
Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// Multiply / add a rank-1 vector along one axis (broadcast over the rest).
Tensor mul_axis(const Tensor& x, const Tensor& v, std::size_t axis);
Tensor add_axis(const Tensor& x, const Tensor& v, std::size_t axis);

Tensor sum(const Tensor& x);                        // -> scalar
Tensor mean_axis(const Tensor& x, std::size_t axis);

/// Bilinear 2x upsampling of the trailing two axes (half-pixel centers,
/// clamped borders); leading axes are batch.
Tensor upsample_bilinear2x(const Tensor& x);

/// mean over elements of max(x,0) - x*t + log(1 + exp(-|x|)); `target` holds
/// constants in [0,1] and receives no gradient.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target);

/// Pointwise custom op: y = f(x), dy/dx = df(x). Lets callers extend the op
/// set (and lets tests inject deliberately wrong backward rules).
Tensor map_unary(const Tensor& x, std::function<double(double)> f,
                 std::function<double(double)> df);

}  // namespace pseg
