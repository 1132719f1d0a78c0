#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// Operations record themselves on the active tape when gradient mode is on
// and at least one input requires a gradient. backward() walks the tape in
// reverse from the loss. Leaf gradients accumulate across calls; callers
// zero them between steps. Gradients of intermediate tensors are released
// when backward() returns.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "folk/real.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;  // negative axes count from the end
  int ndim() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;

  std::span<real> data();
  std::span<const real> data() const;
  real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<real> grad();
  std::span<const real> grad() const;
  void zero_grad();   // keeps the buffer, fills with zeros
  void clear_grad();  // releases the buffer (grad becomes absent)

  // Copy of the data with no graph history.
  Tensor detach() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void(Node&)> backward;
};

// Ordered record of operations; a node's inputs always precede it.
class Tape {
 public:
  Tape();
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::uint64_t id() const { return id_; }
  void clear();

  void record(Node node);
  void backward_from(const Tensor& loss);

 private:
  std::uint64_t id_;
  std::vector<Node> nodes_;
};

Tape& active_tape();

// Makes a fresh tape active for the lifetime of the scope.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

bool grad_enabled();

// Nothing executed inside records on the tape; outputs do not require grad.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Throws ShapeError on a non-scalar loss and Error if the loss was not
// recorded on the active tape.
void backward(const Tensor& loss);

// ---- operations -----------------------------------------------------------

// a [..., M, K] x b [K, N] -> [..., M, N], or batched with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with trailing-dimension broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real s);
Tensor add_scalar(const Tensor& x, real s);

Tensor reshape(const Tensor& x, Shape shape);  // one -1 allowed
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = real(1e-6));
Tensor gelu(const Tensor& x);
// softmax(x / temperature) along `axis`.
Tensor softmax(const Tensor& x, int axis = -1, real temperature = real(1));
Tensor log_softmax(const Tensor& x, int axis = -1);
// log(max(x, floor)); the gradient is zero where the floor is active.
Tensor log(const Tensor& x, real floor = real(0));
Tensor exp(const Tensor& x);
// Gradient at exactly zero is taken as zero.
Tensor sqrt(const Tensor& x);

// x [B, C, H, W], weight [O, C, kh, kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor avgpool2d(const Tensor& x, int kernel, int stride);
// table [V, D], rows by index -> [n, D].
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& indices);

// Unnormalized 2D DFT over the last two axes of a real tensor [..., H, W];
// output [..., H, W, 2] holding (re, im). H and W must be powers of two.
Tensor fft2(const Tensor& x);

}  // namespace ad
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
