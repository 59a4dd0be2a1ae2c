#pragma once

// Dense row-major tensors with a tape-based reverse-mode differentiation
// graph. Tensor<float> is used for training, Tensor<double> for gradient
// verification; both share one implementation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transclaw/errors.hpp"

namespace transclaw {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t generation = 0;
  std::int64_t node = -1;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return values().size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const T> values() const;
  // Mutable access for initialisation and optimiser updates. Mutating a
  // tensor that is already recorded on the tape invalidates its backward.
  std::span<T> data();
  T item() const;

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();
  void clear_grad();

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  // Node on the active tape, if this tensor was produced by a recorded op
  // in the current generation.
  std::optional<std::int64_t> node_id() const;

  // Value copy with no graph attachment.
  Tensor detach() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Append-only record of the operations executed during one forward pass.
// Node order is insertion order, which is a valid topological order because
// an op can only consume tensors that already exist.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* tag;
    std::vector<std::int64_t> inputs;
    std::function<void()> backward;
  };

  static Tape& current();

  std::int64_t record(const char* tag, std::vector<std::int64_t> inputs,
                      std::function<void()> backward);
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::uint64_t generation() const { return generation_; }
  void reset();

  // Runs backward closures from `last` down to 0, then resets.
  void run_backward(std::int64_t last);

 private:
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

// Recording switch, thread-local.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- graph helpers used by op implementations -----------------------------

namespace detail {

// True if gradients must flow into `t` (parameter leaf or live graph node).
template <typename T>
bool tracks(const Tensor<T>& t);

template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& impl);

// Registers `out` as the result of `tag` applied to `inputs` if any input is
// tracked and grad mode is on. `backward` reads out's grad and accumulates
// into the inputs' grads.
template <typename T>
void attach(Tensor<T>& out, const char* tag, std::initializer_list<const Tensor<T>*> inputs,
            std::function<void()> backward);

template <typename T>
void attach(Tensor<T>& out, const char* tag, const std::vector<const Tensor<T>*>& inputs,
            std::function<void()> backward);

// Throws NumericError naming `op` if any value is NaN/Inf.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op);

}  // namespace detail

// ---- core operations ------------------------------------------------------

// a[...,M,K] x b[...,K,N] with identical leading extents.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);

// y = x * gamma + beta with gamma/beta indexed by `axis` of x. The only
// broadcasting the library supports; used for normalisation affine terms.
template <typename T>
Tensor<T> axis_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::size_t axis);

enum class ReduceOp { kSum, kMean, kMax };

// Reduction over one axis (removed from the shape) or over everything
// (rank-0 result) when `axis` is empty. Max routes its gradient to the first
// maximum in row-major order.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt);

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceOp::kSum, a, axis);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceOp::kMean, a, axis);
}
template <typename T>
Tensor<T> max(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(ReduceOp::kMax, a, axis);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
// Swaps two axes (the last two by default).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

// Seeds d(loss)/d(loss) = 1 and propagates through the tape; the tape is
// consumed. Gradients accumulate additively into existing grad buffers.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace transclaw
