#include "transclaw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kernels.hpp"

namespace transclaw {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->values;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->values;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!impl_) throw GraphError("use of an undefined tensor");
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_) return;
  impl_->grad.assign(impl_->values.size(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  if (!impl_) return;
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!impl_) throw GraphError("use of an undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::optional<std::int64_t> Tensor<T>::node_id() const {
  if (!impl_ || impl_->node < 0) return std::nullopt;
  if (impl_->generation != Tape<T>::current().generation()) return std::nullopt;
  return impl_->node;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->values);
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
std::int64_t Tape<T>::record(const char* tag, std::vector<std::int64_t> inputs,
                             std::function<void()> backward) {
  nodes_.push_back(Node{tag, std::move(inputs), std::move(backward)});
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  ++generation_;
}

template <typename T>
void Tape<T>::run_backward(std::int64_t last) {
  for (std::int64_t i = last; i >= 0; --i) {
    auto& fn = nodes_[static_cast<std::size_t>(i)].backward;
    if (fn) fn();
  }
  reset();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

// ---- detail helpers -------------------------------------------------------

namespace detail {

template <typename T>
bool tracks(const Tensor<T>& t) {
  if (!t.defined()) return false;
  return t.requires_grad() || t.node_id().has_value();
}

template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.values.size(), T(0));
  return impl.grad;
}

template <typename T>
void attach(Tensor<T>& out, const char* tag, const std::vector<const Tensor<T>*>& inputs,
            std::function<void()> backward) {
  if (!GradMode::enabled()) return;
  bool any = false;
  for (const auto* in : inputs) any = any || tracks(*in);
  if (!any) return;
  auto& tape = Tape<T>::current();
  std::vector<std::int64_t> ids;
  ids.reserve(inputs.size());
  for (const auto* in : inputs) ids.push_back(in->node_id().value_or(-1));
  const auto id = tape.record(tag, std::move(ids), std::move(backward));
  out.impl()->node = id;
  out.impl()->generation = tape.generation();
}

template <typename T>
void attach(Tensor<T>& out, const char* tag, std::initializer_list<const Tensor<T>*> inputs,
            std::function<void()> backward) {
  attach(out, tag, std::vector<const Tensor<T>*>(inputs), std::move(backward));
}

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

}  // namespace detail

using detail::attach;
using detail::ensure_finite;
using detail::grad_buffer;
using detail::tracks;

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

// ---- matmul ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool lead_ok = sa.size() >= 2 && sa.size() == sb.size() &&
                       std::equal(sa.begin(), sa.end() - 2, sb.begin());
  if (!lead_ok || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(m);
  so.push_back(n);
  std::vector<T> out(batch * m * n);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t p = 0; p < batch; ++p) {
    kernels::gemm_nn(m, n, k, av + p * m * k, bv + p * k * n, out.data() + p * m * n, false);
  }
  Tensor<T> c(so, std::move(out));
  ensure_finite(c, "matmul");
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  const bool ga = tracks(a), gb = tracks(b);
  attach(c, "matmul", {&a, &b}, [=] {
    if (ci->grad.empty()) return;
    const T* g = ci->grad.data();
    for (std::size_t p = 0; p < batch; ++p) {
      if (ga) {
        // dA = dC * B^T
        kernels::gemm_nt(m, k, n, g + p * m * n, bi->values.data() + p * k * n,
                         grad_buffer(*ai).data() + p * m * k, true);
      }
      if (gb) {
        // dB = A^T * dC
        kernels::gemm_tn(k, n, m, ai->values.data() + p * m * k, g + p * m * n,
                         grad_buffer(*bi).data() + p * k * n, true);
      }
    }
  });
  return c;
}

// ---- elementwise ----------------------------------------------------------

namespace {

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(Binary op, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  require_same_shape(a, b, name);
  const auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (op) {
      case Binary::kAdd: out[i] = av[i] + bv[i]; break;
      case Binary::kSub: out[i] = av[i] - bv[i]; break;
      case Binary::kMul: out[i] = av[i] * bv[i]; break;
    }
  }
  Tensor<T> c(a.shape(), std::move(out));
  ensure_finite(c, name);
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  const bool ga = tracks(a), gb = tracks(b);
  attach(c, name, {&a, &b}, [=] {
    if (ci->grad.empty()) return;
    const auto& g = ci->grad;
    if (ga) {
      auto& da = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += op == Binary::kMul ? g[i] * bi->values[i] : g[i];
      }
    }
    if (gb) {
      auto& db = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (op) {
          case Binary::kAdd: db[i] += g[i]; break;
          case Binary::kSub: db[i] -= g[i]; break;
          case Binary::kMul: db[i] += g[i] * ai->values[i]; break;
        }
      }
    }
  });
  return c;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::kAdd, a, b, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::kSub, a, b, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::kMul, a, b, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  Tensor<T> c(a.shape(), std::move(out));
  ensure_finite(c, "scale");
  auto ai = a.impl(), ci = c.impl();
  attach(c, "scale", {&a}, [=] {
    if (ci->grad.empty()) return;
    auto& da = grad_buffer(*ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * ci->grad[i];
  });
  return c;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += s;
  Tensor<T> c(a.shape(), std::move(out));
  ensure_finite(c, "add_scalar");
  auto ai = a.impl(), ci = c.impl();
  attach(c, "add_scalar", {&a}, [=] {
    if (ci->grad.empty()) return;
    auto& da = grad_buffer(*ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ci->grad[i];
  });
  return c;
}

template <typename T>
Tensor<T> axis_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("axis_affine: axis out of range");
  const std::size_t c = s[axis];
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("axis_affine: affine terms need " + std::to_string(c) +
                         " entries for shape " + shape_str(s));
  }
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (o * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] * gv[ch] + bv[ch];
    }
  }
  Tensor<T> y(s, std::move(out));
  ensure_finite(y, "axis_affine");
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
  const bool gx = tracks(x), gg = tracks(gamma), gb = tracks(beta);
  attach(y, "axis_affine", {&x, &gamma, &beta}, [=] {
    if (yi->grad.empty()) return;
    const auto& g = yi->grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (o * c + ch) * inner;
        T sg = 0, sgx = 0;
        for (std::size_t i = 0; i < inner; ++i) {
          sg += g[base + i];
          sgx += g[base + i] * xi->values[base + i];
        }
        if (gx) {
          auto& dx = grad_buffer(*xi);
          const T gam = gi->values[ch];
          for (std::size_t i = 0; i < inner; ++i) dx[base + i] += g[base + i] * gam;
        }
        if (gg) grad_buffer(*gi)[ch] += sgx;
        if (gb) grad_buffer(*bi)[ch] += sg;
      }
    }
  });
  return y;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::optional<std::size_t> axis) {
  const auto& s = a.shape();
  std::size_t outer = 1, len = a.numel(), inner = 1;
  Shape so;
  if (axis) {
    if (*axis >= s.size()) {
      throw DimensionError("reduce: axis " + std::to_string(*axis) + " out of range for shape " +
                           shape_str(s));
    }
    outer = shape_numel(Shape(s.begin(), s.begin() + *axis));
    len = s[*axis];
    inner = shape_numel(Shape(s.begin() + *axis + 1, s.end()));
    so = s;
    so.erase(so.begin() + *axis);
  }
  const auto av = a.values();
  std::vector<T> out(outer * inner);
  std::vector<std::size_t> arg;  // argmax offsets for kMax
  if (op == ReduceOp::kMax) arg.resize(out.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T acc = op == ReduceOp::kMax ? av[base] : T(0);
      std::size_t best = 0;
      for (std::size_t r = 0; r < len; ++r) {
        const T v = av[base + r * inner];
        if (op == ReduceOp::kMax) {
          if (v > acc) {
            acc = v;
            best = r;
          }
        } else {
          acc += v;
        }
      }
      if (op == ReduceOp::kMean) acc /= static_cast<T>(len);
      out[o * inner + i] = acc;
      if (op == ReduceOp::kMax) arg[o * inner + i] = base + best * inner;
    }
  }
  Tensor<T> c(so, std::move(out));
  auto ai = a.impl(), ci = c.impl();
  attach(c, op == ReduceOp::kMax ? "max" : (op == ReduceOp::kMean ? "mean" : "sum"), {&a},
         [=, arg = std::move(arg)] {
           if (ci->grad.empty()) return;
           auto& da = grad_buffer(*ai);
           const T w = op == ReduceOp::kMean ? T(1) / static_cast<T>(len) : T(1);
           for (std::size_t o = 0; o < outer; ++o) {
             for (std::size_t i = 0; i < inner; ++i) {
               const T g = ci->grad[o * inner + i];
               if (op == ReduceOp::kMax) {
                 da[arg[o * inner + i]] += g;
                 continue;
               }
               const std::size_t base = o * len * inner + i;
               for (std::size_t r = 0; r < len; ++r) da[base + r * inner] += g * w;
             }
           }
         });
  return c;
}

// ---- restructuring --------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor<T> c(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()));
  auto ai = a.impl(), ci = c.impl();
  attach(c, "reshape", {&a}, [=] {
    if (ci->grad.empty()) return;
    auto& da = grad_buffer(*ai);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ci->grad[i];
  });
  return c;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
  const auto& s = a.shape();
  const std::size_t r = s.size();
  std::vector<bool> seen(r, false);
  if (order.size() != r) throw DimensionError("permute: order length must equal rank");
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("permute: order is not a permutation");
    seen[o] = true;
  }
  Shape so(r);
  for (std::size_t i = 0; i < r; ++i) so[i] = s[order[i]];
  const auto in_strides = strides_of(s);
  // Source offset for every destination element, shared by forward and backward.
  std::vector<std::size_t> src(a.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < so[i]) break;
      idx[i] = 0;
    }
  }
  const auto av = a.values();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = av[src[i]];
  Tensor<T> c(so, std::move(out));
  auto ai = a.impl(), ci = c.impl();
  attach(c, "permute", {&a}, [=, src = std::move(src)] {
    if (ci->grad.empty()) return;
    auto& da = grad_buffer(*ai);
    for (std::size_t i = 0; i < src.size(); ++i) da[src[i]] += ci->grad[i];
  });
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
  const std::size_t r = a.rank();
  if (axis0 >= r || axis1 >= r) throw DimensionError("transpose: axis out of range");
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[axis0], order[axis1]);
  return permute(a, order);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose: rank must be at least 2");
  return transpose(a, a.rank() - 2, a.rank() - 1);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) ok = i == axis || sp[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat: extent mismatch " + shape_str(s0) + " vs " + shape_str(sp) +
                           " along axis " + std::to_string(axis));
    }
    widths.push_back(sp[axis]);
    total += sp[axis];
  }
  const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s0.begin() + axis + 1, s0.end()));
  Shape so = s0;
  so[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets.push_back(offset);
    const auto pv = parts[p].values();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  Tensor<T> c(so, std::move(out));
  std::vector<const Tensor<T>*> inputs;
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  std::vector<bool> grads;
  for (const auto& p : parts) {
    inputs.push_back(&p);
    impls.push_back(p.impl());
    grads.push_back(tracks(p));
  }
  auto ci = c.impl();
  attach(c, "concat", inputs, [=] {
    if (ci->grad.empty()) return;
    for (std::size_t p = 0; p < impls.size(); ++p) {
      if (!grads[p]) continue;
      auto& dp = grad_buffer(*impls[p]);
      const std::size_t chunk = widths[p] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = ci->grad.data() + (o * total + offsets[p]) * inner;
        T* d = dp.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
      }
    }
  });
  return c;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds extent " +
                         std::to_string(s[axis]));
  }
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t full = s[axis];
  Shape so = s;
  so[axis] = length;
  const auto av = a.values();
  std::vector<T> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.begin() + (o * full + start) * inner, length * inner,
                out.begin() + o * length * inner);
  }
  Tensor<T> c(so, std::move(out));
  auto ai = a.impl(), ci = c.impl();
  attach(c, "slice", {&a}, [=] {
    if (ci->grad.empty()) return;
    auto& da = grad_buffer(*ai);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* g = ci->grad.data() + o * length * inner;
      T* d = da.data() + (o * full + start) * inner;
      for (std::size_t i = 0; i < length * inner; ++i) d[i] += g[i];
    }
  });
  return c;
}

// ---- backward -------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto id = loss.node_id();
  if (!id) {
    if (loss.requires_grad()) {
      grad_buffer(*loss.impl())[0] += T(1);
      return;
    }
    throw GraphError("backward on a tensor that is not attached to the graph");
  }
  grad_buffer(*loss.impl())[0] += T(1);
  Tape<T>::current().run_backward(*id);
}

// ---- instantiations -------------------------------------------------------

#define TRANSCLAW_INSTANTIATE(T)                                                                \
  template class Tensor<T>;                                                                     \
  template class Tape<T>;                                                                       \
  template bool detail::tracks(const Tensor<T>&);                                               \
  template std::vector<T>& detail::grad_buffer(detail::TensorImpl<T>&);                         \
  template void detail::attach(Tensor<T>&, const char*, std::initializer_list<const Tensor<T>*>, \
                               std::function<void()>);                                          \
  template void detail::attach(Tensor<T>&, const char*, const std::vector<const Tensor<T>*>&,   \
                               std::function<void()>);                                          \
  template void detail::ensure_finite(const Tensor<T>&, const char*);                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> axis_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                 std::size_t);                                                  \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, std::optional<std::size_t>);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template void backward(const Tensor<T>&);

TRANSCLAW_INSTANTIATE(float)
TRANSCLAW_INSTANTIATE(double)

#undef TRANSCLAW_INSTANTIATE

}  // namespace transclaw
