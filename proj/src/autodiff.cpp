#include "folk/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "folk/error.hpp"
#include "folk/spectral.hpp"

namespace folk {
inline namespace FOLK_PRECISION_NS {
namespace ad {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;
  std::size_t node_index = 0;
};
}  // namespace detail

namespace {

using Matrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Matrix>;
using CMapM = Eigen::Map<const Matrix>;

std::atomic<std::uint64_t> g_next_tape_id{1};
thread_local int t_no_grad_depth = 0;

Tape& default_tape() {
  thread_local Tape tape;
  return tape;
}
thread_local Tape* t_active = nullptr;

int norm_axis(int axis, int ndim, const char* op) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(ndim));
  }
  return a;
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

std::span<real> grad_of(Tensor& t) {
  auto* impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), real(0));
  return impl->grad;
}

std::span<const real> out_grad(Node& n) { return n.output.impl()->grad; }

// Builds the result tensor and records a node when required.
Tensor record(const char* op, Shape shape, std::vector<real> data, std::vector<Tensor> inputs,
              std::function<void(Node&)> fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.set_requires_grad(true);
  active_tape().record(Node{op, std::move(inputs), out, std::move(fn)});
  return out;
}

// Index maps for numpy-style broadcasting of two operands.
struct BroadcastPlan {
  Shape out_shape;
  std::shared_ptr<const std::vector<std::int64_t>> ia, ib;  // null means identity
};

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::int64_t> build_broadcast_index(const Shape& in, const Shape& out) {
  const std::int64_t n = numel(out);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  const std::size_t r = out.size(), off = r - in.size();
  std::vector<std::int64_t> in_strides(r, 0);
  const auto s = strides_of(in);
  for (std::size_t i = 0; i < in.size(); ++i) in_strides[i + off] = in[i] == 1 ? 0 : s[i];
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t pos = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = pos;
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      ++counter[d];
      pos += in_strides[d];
      if (counter[d] < out[d]) break;
      pos -= in_strides[d] * out[d];
      counter[d] = 0;
    }
  }
  return idx;
}

// Shapes repeat every training step, so index maps are memoized per thread.
std::shared_ptr<const std::vector<std::int64_t>> broadcast_index(const Shape& in, const Shape& out) {
  thread_local std::map<std::pair<Shape, Shape>, std::shared_ptr<const std::vector<std::int64_t>>> cache;
  auto key = std::make_pair(in, out);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  if (cache.size() > 4096) cache.clear();
  auto idx = std::make_shared<const std::vector<std::int64_t>>(build_broadcast_index(in, out));
  cache.emplace(std::move(key), idx);
  return idx;
}

std::shared_ptr<BroadcastPlan> plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto plan = std::make_shared<BroadcastPlan>();
  plan->out_shape = broadcast_shapes(a, b, op);
  if (a != plan->out_shape) plan->ia = broadcast_index(a, plan->out_shape);
  if (b != plan->out_shape) plan->ib = broadcast_index(b, plan->out_shape);
  return plan;
}

inline std::int64_t at(const std::shared_ptr<const std::vector<std::int64_t>>& map, std::int64_t i) {
  return map ? (*map)[static_cast<std::size_t>(i)] : i;
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  const std::int64_t n = numel(plan->out_shape);
  std::vector<real> out(static_cast<std::size_t>(n));
  const auto da = a.data();
  const auto db = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const real x = da[at(plan->ia, i)], y = db[at(plan->ib, i)];
    out[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
  }
  return record(name, plan->out_shape, std::move(out), {a, b}, [plan, op, n](Node& node) {
    const auto g = out_grad(node);
    Tensor& ta = node.inputs[0];
    Tensor& tb = node.inputs[1];
    if (ta.requires_grad()) {
      auto ga = grad_of(ta);
      const auto db = tb.data();
      for (std::int64_t i = 0; i < n; ++i) ga[at(plan->ia, i)] += op == BinOp::Mul ? g[i] * db[at(plan->ib, i)] : g[i];
    }
    if (tb.requires_grad()) {
      auto gb = grad_of(tb);
      const auto da = ta.data();
      for (std::int64_t i = 0; i < n; ++i) {
        const real v = op == BinOp::Add ? g[i] : op == BinOp::Sub ? -g[i] : g[i] * da[at(plan->ia, i)];
        gb[at(plan->ib, i)] += v;
      }
    }
  });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  const auto dx = x.data();
  std::vector<real> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  return record(name, x.shape(), std::move(out), {x}, [bwd](Node& node) {
    const auto g = out_grad(node);
    const auto y = node.output.data();
    const auto xv = node.inputs[0].data();
    auto gx = grad_of(node.inputs[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * bwd(xv[i], y[i]);
  });
}

// Gathers output element i from input element map[i]; backward scatters.
Tensor gather(const Tensor& x, Shape out_shape, std::shared_ptr<const std::vector<std::int64_t>> map, const char* name) {
  const auto dx = x.data();
  std::vector<real> out(map->size());
  for (std::size_t i = 0; i < map->size(); ++i) out[i] = dx[(*map)[i]];
  return record(name, std::move(out_shape), std::move(out), {x}, [map](Node& node) {
    const auto g = out_grad(node);
    auto gx = grad_of(node.inputs[0]);
    for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += g[i];
  });
}

std::shared_ptr<const std::vector<std::int64_t>> permute_index(const Shape& in, const std::vector<int>& perm) {
  const int r = static_cast<int>(in.size());
  const auto in_strides = strides_of(in);
  Shape out_shape(r);
  std::vector<std::int64_t> step(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    step[i] = in_strides[perm[i]];
  }
  const std::int64_t n = numel(in);
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t pos = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    (*map)[i] = pos;
    for (int d = r - 1; d >= 0; --d) {
      ++counter[d];
      pos += step[d];
      if (counter[d] < out_shape[d]) break;
      pos -= step[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  return map;
}

// Splits `shape` around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---- shapes / tensor ------------------------------------------------------

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<real> data, bool requires_grad) {
  for (auto d : shape) {
    if (d < 0) throw ShapeError("tensor: negative dimension in " + to_string(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != ad::numel(shape)) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real(0), requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(ad::numel(shape));
  return Tensor(std::move(shape), std::vector<real>(n, value), requires_grad);
}

Tensor Tensor::scalar(real value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::dim(int axis) const { return impl_->shape[norm_axis(axis, ndim(), "dim")]; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
std::span<real> Tensor::data() { return impl_->data; }
std::span<const real> Tensor::data() const { return impl_->data; }

real Tensor::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<real> Tensor::grad() { return impl_->grad; }
std::span<const real> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// ---- tape -----------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id++) {}

void Tape::clear() {
  nodes_.clear();
  id_ = g_next_tape_id++;
}

void Tape::record(Node node) {
  auto* impl = node.output.impl();
  impl->tape_id = id_;
  impl->node_index = nodes_.size();
  nodes_.push_back(std::move(node));
}

void Tape::backward_from(const Tensor& loss) {
  auto* li = loss.impl();
  if (!li) throw Error("backward: undefined loss tensor");
  if (li->data.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(li->shape));
  if (!li->requires_grad || li->tape_id != id_ || li->node_index >= nodes_.size() ||
      !nodes_[li->node_index].output.same_as(loss)) {
    throw Error("backward: loss is not on the active graph");
  }
  const std::size_t last = li->node_index;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output.clear_grad();
  li->grad.assign(1, real(1));
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;
    node.backward(node);
  }
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output.clear_grad();
}

Tape& active_tape() { return t_active ? *t_active : default_tape(); }

TapeScope::TapeScope() : previous_(t_active) { t_active = &tape_; }
TapeScope::~TapeScope() { t_active = previous_; }

bool grad_enabled() { return t_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }

void backward(const Tensor& loss) { active_tape().backward_from(loss); }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::int64_t K = a.dim(-1);
  if (b.dim(-2) != K) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::int64_t N = b.dim(-1);
  if (b.ndim() == 2) {
    const std::int64_t R = a.numel() / K;
    Shape out_shape = a.shape();
    out_shape.back() = N;
    std::vector<real> out(static_cast<std::size_t>(R * N));
    MapM(out.data(), R, N).noalias() = CMapM(a.data().data(), R, K) * CMapM(b.data().data(), K, N);
    return record("matmul", std::move(out_shape), std::move(out), {a, b}, [R, K, N](Node& node) {
      CMapM g(out_grad(node).data(), R, N);
      Tensor& ta = node.inputs[0];
      Tensor& tb = node.inputs[1];
      if (ta.requires_grad()) MapM(grad_of(ta).data(), R, K).noalias() += g * CMapM(tb.data().data(), K, N).transpose();
      if (tb.requires_grad()) MapM(grad_of(tb).data(), K, N).noalias() += CMapM(ta.data().data(), R, K).transpose() * g;
    });
  }
  if (a.ndim() != b.ndim() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw ShapeError("matmul: batch dimensions differ for " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::int64_t M = a.dim(-2);
  const std::int64_t batch = a.numel() / (M * K);
  Shape out_shape = a.shape();
  out_shape.back() = N;
  std::vector<real> out(static_cast<std::size_t>(batch * M * N));
  for (std::int64_t i = 0; i < batch; ++i) {
    MapM o(out.data() + i * M * N, M, N);
    CMapM x(a.data().data() + i * M * K, M, K), y(b.data().data() + i * K * N, K, N);
    o.noalias() = x * y;
  }
  return record("bmm", std::move(out_shape), std::move(out), {a, b}, [batch, M, K, N](Node& node) {
    const real* g = out_grad(node).data();
    Tensor& ta = node.inputs[0];
    Tensor& tb = node.inputs[1];
    for (std::int64_t i = 0; i < batch; ++i) {
      CMapM gi(g + i * M * N, M, N);
      CMapM x(ta.data().data() + i * M * K, M, K), y(tb.data().data() + i * K * N, K, N);
      if (ta.requires_grad()) {
        MapM ga(grad_of(ta).data() + i * M * K, M, K);
        ga.noalias() += gi * y.transpose();
      }
      if (tb.requires_grad()) {
        MapM gb(grad_of(tb).data() + i * K * N, K, N);
        gb.noalias() += x.transpose() * gi;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, real s) {
  return unary(x, "scale", [s](real v) { return v * s; }, [s](real, real) { return s; });
}

Tensor add_scalar(const Tensor& x, real s) {
  return unary(x, "add_scalar", [s](real v) { return v + s; }, [](real, real) { return real(1); });
}

// ---- shape manipulation ---------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 in " + to_string(shape));
      infer = i;
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const auto dx = x.data();
  return record("reshape", std::move(shape), std::vector<real>(dx.begin(), dx.end()), {x}, [](Node& node) {
    const auto g = out_grad(node);
    auto gx = grad_of(node.inputs[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.ndim();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) throw ShapeError("permute: invalid permutation for " + to_string(x.shape()));
    seen[p] = true;
  }
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  thread_local std::map<std::pair<Shape, std::vector<int>>, std::shared_ptr<const std::vector<std::int64_t>>> cache;
  auto key = std::make_pair(x.shape(), perm);
  auto it = cache.find(key);
  if (it == cache.end()) {
    if (cache.size() > 4096) cache.clear();
    it = cache.emplace(std::move(key), permute_index(x.shape(), perm)).first;
  }
  auto map = it->second;
  return gather(x, std::move(out_shape), std::move(map), "permute");
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<int> perm(x.ndim());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[norm_axis(axis0, x.ndim(), "transpose")], perm[norm_axis(axis1, x.ndim(), "transpose")]);
  return permute(x, perm);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape, "broadcast_to") != shape) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return gather(x, shape, broadcast_index(x.shape(), shape), "broadcast_to");
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0].ndim();
  const int ax = norm_axis(axis, r, "concat");
  Shape out_shape = xs[0].shape();
  out_shape[ax] = 0;
  for (const auto& t : xs) {
    if (t.ndim() != r) throw ShapeError("concat: rank mismatch " + to_string(xs[0].shape()) + " vs " + to_string(t.shape()));
    for (int d = 0; d < r; ++d) {
      if (d != ax && t.shape()[d] != xs[0].shape()[d]) {
        throw ShapeError("concat: shapes " + to_string(xs[0].shape()) + " and " + to_string(t.shape()) +
                         " differ off the concat axis");
      }
    }
    out_shape[ax] += t.shape()[ax];
  }
  const auto split = split_axis(out_shape, ax);
  std::vector<real> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::int64_t len = t.shape()[ax];
    const auto d = t.data();
    for (std::int64_t o = 0; o < split.outer; ++o)
      std::copy_n(d.data() + o * len * split.inner, len * split.inner,
                  out.data() + (o * split.len + off) * split.inner);
    off += len;
  }
  return record("concat", std::move(out_shape), std::move(out), xs, [split, offsets, ax](Node& node) {
    const auto g = out_grad(node);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      Tensor& t = node.inputs[k];
      if (!t.requires_grad()) continue;
      const std::int64_t len = t.shape()[ax];
      auto gt = grad_of(t);
      for (std::int64_t o = 0; o < split.outer; ++o)
        for (std::int64_t j = 0; j < len * split.inner; ++j)
          gt[o * len * split.inner + j] += g[(o * split.len + offsets[k]) * split.inner + j];
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end) {
  const int ax = norm_axis(axis, x.ndim(), "slice");
  const std::int64_t len = x.shape()[ax];
  if (start < 0 || end > len || start > end) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") out of bounds for " +
                     to_string(x.shape()) + " on axis " + std::to_string(ax));
  }
  const auto split = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - start;
  auto map = std::make_shared<std::vector<std::int64_t>>();
  map->reserve(static_cast<std::size_t>(numel(out_shape)));
  for (std::int64_t o = 0; o < split.outer; ++o)
    for (std::int64_t j = start; j < end; ++j)
      for (std::int64_t i = 0; i < split.inner; ++i) map->push_back((o * len + j) * split.inner + i);
  return gather(x, std::move(out_shape), std::move(map), "slice");
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto d = x.data();
  real acc = 0;
  for (real v : d) acc += v;
  return record("sum", {}, {acc}, {x}, [](Node& node) {
    const real g = out_grad(node)[0];
    for (auto& v : grad_of(node.inputs[0])) v += g;
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const int ax = norm_axis(axis, x.ndim(), "sum");
  const auto split = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + ax);
  std::vector<real> out(static_cast<std::size_t>(split.outer * split.inner), real(0));
  const auto d = x.data();
  for (std::int64_t o = 0; o < split.outer; ++o)
    for (std::int64_t j = 0; j < split.len; ++j)
      for (std::int64_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += d[(o * split.len + j) * split.inner + i];
  return record("sum_axis", std::move(out_shape), std::move(out), {x}, [split](Node& node) {
    const auto g = out_grad(node);
    auto gx = grad_of(node.inputs[0]);
    for (std::int64_t o = 0; o < split.outer; ++o)
      for (std::int64_t j = 0; j < split.len; ++j)
        for (std::int64_t i = 0; i < split.inner; ++i)
          gx[(o * split.len + j) * split.inner + i] += g[o * split.inner + i];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), real(1) / static_cast<real>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const int ax = norm_axis(axis, x.ndim(), "mean");
  return scale(sum(x, ax, keepdim), real(1) / static_cast<real>(x.shape()[ax]));
}

// ---- nonlinearities -------------------------------------------------------

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  const std::int64_t D = x.dim(-1);
  if (gain.numel() != D || bias.numel() != D) {
    throw ShapeError("layernorm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                     " do not match last dim of " + to_string(x.shape()));
  }
  const std::int64_t rows = x.numel() / D;
  auto xhat = std::make_shared<std::vector<real>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<real>>(static_cast<std::size_t>(rows));
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  const auto d = x.data();
  const auto gw = gain.data();
  const auto bw = bias.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const real* row = d.data() + r * D;
    double mu = 0.0;
    for (std::int64_t i = 0; i < D; ++i) mu += row[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::int64_t i = 0; i < D; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*rstd)[r] = static_cast<real>(rs);
    for (std::int64_t i = 0; i < D; ++i) {
      const real xh = static_cast<real>((row[i] - mu) * rs);
      (*xhat)[r * D + i] = xh;
      out[r * D + i] = xh * gw[i] + bw[i];
    }
  }
  return record("layernorm", x.shape(), std::move(out), {x, gain, bias}, [xhat, rstd, rows, D](Node& node) {
    const auto g = out_grad(node);
    Tensor& tx = node.inputs[0];
    Tensor& tg = node.inputs[1];
    Tensor& tb = node.inputs[2];
    const auto gw = tg.data();
    if (tg.requires_grad()) {
      auto gg = grad_of(tg);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < D; ++i) gg[i] += g[r * D + i] * (*xhat)[r * D + i];
    }
    if (tb.requires_grad()) {
      auto gb = grad_of(tb);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t i = 0; i < D; ++i) gb[i] += g[r * D + i];
    }
    if (tx.requires_grad()) {
      auto gx = grad_of(tx);
      for (std::int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t i = 0; i < D; ++i) {
          const double gh = g[r * D + i] * gw[i];
          m1 += gh;
          m2 += gh * (*xhat)[r * D + i];
        }
        m1 /= static_cast<double>(D);
        m2 /= static_cast<double>(D);
        for (std::int64_t i = 0; i < D; ++i) {
          const double gh = g[r * D + i] * gw[i];
          gx[r * D + i] += static_cast<real>((*rstd)[r] * (gh - m1 - (*xhat)[r * D + i] * m2));
        }
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x, "gelu",
      [](real v) { return static_cast<real>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
      [](real v, real) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * double(v) * v);
        return static_cast<real>(cdf + v * pdf);
      });
}

Tensor softmax(const Tensor& x, int axis, real temperature) {
  if (!(temperature > 0)) throw InvalidArgument("softmax: temperature must be positive");
  const int ax = norm_axis(axis, x.ndim(), "softmax");
  const auto split = split_axis(x.shape(), ax);
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  const auto d = x.data();
  const real inv_t = real(1) / temperature;
  for (std::int64_t o = 0; o < split.outer; ++o) {
    for (std::int64_t i = 0; i < split.inner; ++i) {
      const std::int64_t base = o * split.len * split.inner + i;
      real mx = d[base];
      for (std::int64_t j = 1; j < split.len; ++j) mx = std::max(mx, d[base + j * split.inner]);
      double z = 0.0;
      for (std::int64_t j = 0; j < split.len; ++j) {
        const real e = std::exp((d[base + j * split.inner] - mx) * inv_t);
        out[base + j * split.inner] = e;
        z += e;
      }
      const real inv_z = static_cast<real>(1.0 / z);
      for (std::int64_t j = 0; j < split.len; ++j) out[base + j * split.inner] *= inv_z;
    }
  }
  return record("softmax", x.shape(), std::move(out), {x}, [split, inv_t](Node& node) {
    const auto g = out_grad(node);
    const auto y = node.output.data();
    auto gx = grad_of(node.inputs[0]);
    for (std::int64_t o = 0; o < split.outer; ++o) {
      for (std::int64_t i = 0; i < split.inner; ++i) {
        const std::int64_t base = o * split.len * split.inner + i;
        double dot = 0.0;
        for (std::int64_t j = 0; j < split.len; ++j) dot += g[base + j * split.inner] * y[base + j * split.inner];
        for (std::int64_t j = 0; j < split.len; ++j) {
          const std::int64_t k = base + j * split.inner;
          gx[k] += static_cast<real>(y[k] * (g[k] - dot) * inv_t);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.ndim(), "log_softmax");
  const auto split = split_axis(x.shape(), ax);
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  const auto d = x.data();
  for (std::int64_t o = 0; o < split.outer; ++o) {
    for (std::int64_t i = 0; i < split.inner; ++i) {
      const std::int64_t base = o * split.len * split.inner + i;
      real mx = d[base];
      for (std::int64_t j = 1; j < split.len; ++j) mx = std::max(mx, d[base + j * split.inner]);
      double z = 0.0;
      for (std::int64_t j = 0; j < split.len; ++j) z += std::exp(double(d[base + j * split.inner]) - mx);
      const double lse = mx + std::log(z);
      for (std::int64_t j = 0; j < split.len; ++j)
        out[base + j * split.inner] = static_cast<real>(d[base + j * split.inner] - lse);
    }
  }
  return record("log_softmax", x.shape(), std::move(out), {x}, [split](Node& node) {
    const auto g = out_grad(node);
    const auto y = node.output.data();
    auto gx = grad_of(node.inputs[0]);
    for (std::int64_t o = 0; o < split.outer; ++o) {
      for (std::int64_t i = 0; i < split.inner; ++i) {
        const std::int64_t base = o * split.len * split.inner + i;
        double gsum = 0.0;
        for (std::int64_t j = 0; j < split.len; ++j) gsum += g[base + j * split.inner];
        for (std::int64_t j = 0; j < split.len; ++j) {
          const std::int64_t k = base + j * split.inner;
          gx[k] += static_cast<real>(g[k] - std::exp(double(y[k])) * gsum);
        }
      }
    }
  });
}

Tensor log(const Tensor& x, real floor) {
  return unary(
      x, "log", [floor](real v) { return std::log(std::max(v, floor)); },
      [floor](real v, real) { return v > floor ? real(1) / v : real(0); });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](real v) { return std::exp(v); }, [](real, real y) { return y; });
}

Tensor sqrt(const Tensor& x) {
  for (real v : x.data()) {
    if (v < 0) throw InvalidArgument("sqrt: negative input");
  }
  return unary(
      x, "sqrt", [](real v) { return std::sqrt(v); }, [](real, real y) { return y > 0 ? real(0.5) / y : real(0); });
}

// ---- convolution ----------------------------------------------------------

namespace {

struct ConvGeom {
  std::int64_t B, C, H, W, O, KH, KW, OH, OW;
  int stride, pad;
};

// cols: [C*KH*KW, OH*OW] for one image.
void im2col(const real* img, const ConvGeom& g, real* cols) {
  for (std::int64_t c = 0; c < g.C; ++c)
    for (std::int64_t kh = 0; kh < g.KH; ++kh)
      for (std::int64_t kw = 0; kw < g.KW; ++kw) {
        real* row = cols + ((c * g.KH + kh) * g.KW + kw) * g.OH * g.OW;
        for (std::int64_t oh = 0; oh < g.OH; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          for (std::int64_t ow = 0; ow < g.OW; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            row[oh * g.OW + ow] = (ih >= 0 && ih < g.H && iw >= 0 && iw < g.W) ? img[(c * g.H + ih) * g.W + iw] : real(0);
          }
        }
      }
}

void col2im(const real* cols, const ConvGeom& g, real* img) {
  for (std::int64_t c = 0; c < g.C; ++c)
    for (std::int64_t kh = 0; kh < g.KH; ++kh)
      for (std::int64_t kw = 0; kw < g.KW; ++kw) {
        const real* row = cols + ((c * g.KH + kh) * g.KW + kw) * g.OH * g.OW;
        for (std::int64_t oh = 0; oh < g.OH; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.H) continue;
          for (std::int64_t ow = 0; ow < g.OW; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.W) img[(c * g.H + ih) * g.W + iw] += row[oh * g.OW + ow];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.ndim() != 4 || weight.ndim() != 4 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, stride, padding};
  g.OH = (g.H + 2 * padding - g.KH) / stride + 1;
  g.OW = (g.W + 2 * padding - g.KW) / stride + 1;
  if (g.OH <= 0 || g.OW <= 0) throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != g.O) throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match output channels");

  const std::int64_t ckk = g.C * g.KH * g.KW, ohw = g.OH * g.OW;
  auto cols = std::make_shared<std::vector<real>>(static_cast<std::size_t>(g.B * ckk * ohw));
  std::vector<real> out(static_cast<std::size_t>(g.B * g.O * ohw));
  CMapM wmat(weight.data().data(), g.O, ckk);
  for (std::int64_t b = 0; b < g.B; ++b) {
    real* cb = cols->data() + b * ckk * ohw;
    im2col(x.data().data() + b * g.C * g.H * g.W, g, cb);
    MapM ob(out.data() + b * g.O * ohw, g.O, ohw);
    ob.noalias() = wmat * CMapM(cb, ckk, ohw);
    if (has_bias)
      for (std::int64_t o = 0; o < g.O; ++o) ob.row(o).array() += bias.data()[o];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return record("conv2d", {g.B, g.O, g.OH, g.OW}, std::move(out), std::move(inputs), [g, cols, ckk, ohw](Node& node) {
    const real* gout = out_grad(node).data();
    Tensor& tx = node.inputs[0];
    Tensor& tw = node.inputs[1];
    std::vector<real> gcols;
    if (tx.requires_grad()) gcols.resize(static_cast<std::size_t>(ckk * ohw));
    for (std::int64_t b = 0; b < g.B; ++b) {
      CMapM gb(gout + b * g.O * ohw, g.O, ohw);
      const real* cb = cols->data() + b * ckk * ohw;
      if (tw.requires_grad()) MapM(grad_of(tw).data(), g.O, ckk).noalias() += gb * CMapM(cb, ckk, ohw).transpose();
      if (tx.requires_grad()) {
        MapM(gcols.data(), ckk, ohw).noalias() = CMapM(tw.data().data(), g.O, ckk).transpose() * gb;
        col2im(gcols.data(), g, grad_of(tx).data() + b * g.C * g.H * g.W);
      }
      if (node.inputs.size() > 2 && node.inputs[2].requires_grad()) {
        auto gbias = grad_of(node.inputs[2]);
        for (std::int64_t o = 0; o < g.O; ++o) gbias[o] += gb.row(o).sum();
      }
    }
  });
}

Tensor avgpool2d(const Tensor& x, int kernel, int stride) {
  if (x.ndim() != 4) throw ShapeError("avgpool2d: expected [B, C, H, W], got " + to_string(x.shape()));
  if (kernel < 1 || stride < 1) throw InvalidArgument("avgpool2d: kernel and stride must be >= 1");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeError("avgpool2d: kernel larger than input " + to_string(x.shape()));
  const real inv = real(1) / static_cast<real>(kernel * kernel);
  std::vector<real> out(static_cast<std::size_t>(B * C * OH * OW), real(0));
  const auto d = x.data();
  for (std::int64_t p = 0; p < B * C; ++p)
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        real acc = 0;
        for (int i = 0; i < kernel; ++i)
          for (int j = 0; j < kernel; ++j) acc += d[(p * H + oh * stride + i) * W + ow * stride + j];
        out[(p * OH + oh) * OW + ow] = acc * inv;
      }
  return record("avgpool2d", {B, C, OH, OW}, std::move(out), {x}, [=](Node& node) {
    const auto g = out_grad(node);
    auto gx = grad_of(node.inputs[0]);
    for (std::int64_t p = 0; p < B * C; ++p)
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          const real v = g[(p * OH + oh) * OW + ow] * inv;
          for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) gx[(p * H + oh * stride + i) * W + ow * stride + j] += v;
        }
  });
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& indices) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be [V, D], got " + to_string(table.shape()));
  const std::int64_t V = table.dim(0), D = table.dim(1);
  auto map = std::make_shared<std::vector<std::int64_t>>();
  map->reserve(indices.size() * static_cast<std::size_t>(D));
  for (auto idx : indices) {
    if (idx < 0 || idx >= V) throw ShapeError("embedding: index " + std::to_string(idx) + " out of range for " + to_string(table.shape()));
    for (std::int64_t j = 0; j < D; ++j) map->push_back(idx * D + j);
  }
  return gather(table, {static_cast<std::int64_t>(indices.size()), D}, std::move(map), "embedding");
}

// ---- spectral -------------------------------------------------------------

Tensor fft2(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("fft2: need rank >= 2, got " + to_string(x.shape()));
  const std::int64_t H = x.dim(-2), W = x.dim(-1);
  const std::int64_t planes = x.numel() / (H * W);
  Shape out_shape = x.shape();
  out_shape.push_back(2);
  std::vector<real> out(static_cast<std::size_t>(x.numel() * 2));
  const auto d = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    spectral::RealGrid grid(static_cast<std::size_t>(H), static_cast<std::size_t>(W));
    for (std::int64_t i = 0; i < H * W; ++i) grid.data[i] = d[p * H * W + i];
    const auto s = spectral::fft2(grid);
    for (std::int64_t i = 0; i < H * W; ++i) {
      out[2 * (p * H * W + i)] = static_cast<real>(s.data[i].real());
      out[2 * (p * H * W + i) + 1] = static_cast<real>(s.data[i].imag());
    }
  }
  return record("fft2", std::move(out_shape), std::move(out), {x}, [H, W, planes](Node& node) {
    // Adjoint of the forward DFT: Re(sum_k G_k e^{+i theta}), i.e. HW * ifft2.
    const auto g = out_grad(node);
    auto gx = grad_of(node.inputs[0]);
    const double hw = static_cast<double>(H * W);
    for (std::int64_t p = 0; p < planes; ++p) {
      spectral::ComplexSpectrum gs(static_cast<std::size_t>(H), static_cast<std::size_t>(W));
      for (std::int64_t i = 0; i < H * W; ++i) gs.data[i] = {g[2 * (p * H * W + i)], g[2 * (p * H * W + i) + 1]};
      const auto back = spectral::ifft2_complex(gs);
      for (std::int64_t i = 0; i < H * W; ++i) gx[p * H * W + i] += static_cast<real>(hw * back.data[i].real());
    }
  });
}

}  // namespace ad
}  // namespace FOLK_PRECISION_NS
}  // namespace folk
