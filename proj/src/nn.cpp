#include "transclaw/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kernels.hpp"

namespace transclaw {

using detail::attach;
using detail::ensure_finite;
using detail::grad_buffer;
using detail::tracks;

namespace {

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(x.shape()));
  }
}

struct ConvGeometry {
  std::size_t c, h, w, k, stride, pad, oh, ow;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Valid output range [lo, hi) along one axis for kernel offset `tap`.
inline void valid_range(std::size_t tap, std::size_t stride, std::size_t pad, std::size_t in,
                        std::size_t out, std::size_t& lo, std::size_t& hi) {
  lo = 0;
  while (lo < out && lo * stride + tap < pad) ++lo;
  hi = lo;
  while (hi < out && hi * stride + tap < pad + in) ++hi;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      std::size_t ylo, yhi;
      valid_range(ki, g.stride, g.pad, g.h, g.oh, ylo, yhi);
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        std::size_t xlo, xhi;
        valid_range(kj, g.stride, g.pad, g.w, g.ow, xlo, xhi);
        T* row = cols + ((ch * g.k + ki) * g.k + kj) * g.cols();
        std::fill(row, row + ylo * g.ow, T(0));
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* in = x + (ch * g.h + oy * g.stride + ki - g.pad) * g.w;
          T* out = row + oy * g.ow;
          std::fill(out, out + xlo, T(0));
          if (g.stride == 1) {
            std::copy(in + xlo + kj - g.pad, in + xhi + kj - g.pad, out + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] = in[ox * g.stride + kj - g.pad];
          }
          std::fill(out + xhi, out + g.ow, T(0));
        }
        std::fill(row + yhi * g.ow, row + g.oh * g.ow, T(0));
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      std::size_t ylo, yhi;
      valid_range(ki, g.stride, g.pad, g.h, g.oh, ylo, yhi);
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        std::size_t xlo, xhi;
        valid_range(kj, g.stride, g.pad, g.w, g.ow, xlo, xhi);
        const T* row = cols + ((ch * g.k + ki) * g.k + kj) * g.cols();
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* in = row + oy * g.ow;
          T* out = dx + (ch * g.h + oy * g.stride + ki - g.pad) * g.w;
          for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox * g.stride + kj - g.pad] += in[ox];
        }
      }
    }
  }
}

// Per-axis interpolation taps for integer-factor upsampling.
struct Taps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w0, w1;
};

Taps make_taps(std::size_t in, std::size_t factor, UpsampleMode mode) {
  const std::size_t out = in * factor;
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (mode == UpsampleMode::kNearest) {
      t.i0[o] = t.i1[o] = o / factor;
      t.w0[o] = 1.0;
      t.w1[o] = 0.0;
      continue;
    }
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double lambda = src - static_cast<double>(lo);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w0[o] = 1.0 - lambda;
    t.w1[o] = lambda;
  }
  return t;
}

}  // namespace

template <typename T>
NormParams<T> NormParams<T>::identity(std::size_t features, bool with_running_stats) {
  NormParams p;
  p.gamma = Tensor<T>::full({features}, T(1));
  p.beta = Tensor<T>::zeros({features});
  if (with_running_stats) {
    p.running_mean = Tensor<T>::zeros({features});
    p.running_var = Tensor<T>::full({features}, T(1));
  }
  return p;
}

// ---- convolution ----------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
  require_rank(x, 4, "conv2d");
  const auto& ws = p.weight.shape();
  if (ws.size() != 4 || ws[2] != ws[3]) {
    throw DimensionError("conv2d: weight must be [C_out, C_in, k, k], got " + shape_str(ws));
  }
  if (p.stride == 0) throw InvalidArgument("conv2d: stride must be positive");
  const std::size_t batch = x.dim(0), cout = ws[0];
  if (x.dim(1) != ws[1]) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) +
                         " channels, weight expects " + std::to_string(ws[1]));
  }
  if (p.bias.numel() != cout) throw DimensionError("conv2d: bias length must equal C_out");
  ConvGeometry g{};
  g.c = ws[1];
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.k = ws[2];
  g.stride = p.stride;
  g.pad = p.padding;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const std::size_t in_size = g.c * g.h * g.w;
  const std::size_t out_size = cout * g.cols();
  std::vector<T> out(batch * out_size);
  std::vector<T> cols(g.pointwise() ? 0 : g.rows() * g.cols());
  const T* xv = x.values().data();
  const T* wv = p.weight.values().data();
  const auto bv = p.bias.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = xv + b * in_size;
    if (!g.pointwise()) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    T* dst = out.data() + b * out_size;
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(dst + co * g.cols(), dst + (co + 1) * g.cols(), bv[co]);
    }
    kernels::gemm_nn(cout, g.cols(), g.rows(), wv, src, dst, true);
  }
  Tensor<T> y({batch, cout, g.oh, g.ow}, std::move(out));
  ensure_finite(y, "conv2d");

  auto xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl(), yi = y.impl();
  const bool gx = tracks(x), gw = tracks(p.weight), gb = tracks(p.bias);
  attach(y, "conv2d", {&x, &p.weight, &p.bias}, [=] {
    if (yi->grad.empty()) return;
    std::vector<T> cols_b(g.pointwise() ? 0 : g.rows() * g.cols());
    std::vector<T> dcols(g.pointwise() ? 0 : g.rows() * g.cols());
    for (std::size_t b = 0; b < batch; ++b) {
      const T* dy = yi->grad.data() + b * out_size;
      if (gw) {
        const T* src = xi->values.data() + b * in_size;
        if (!g.pointwise()) {
          im2col(src, g, cols_b.data());
          src = cols_b.data();
        }
        kernels::gemm_nt(cout, g.rows(), g.cols(), dy, src, grad_buffer(*wi).data(), true);
      }
      if (gb) {
        auto& db = grad_buffer(*bi);
        for (std::size_t co = 0; co < cout; ++co) {
          T s = 0;
          for (std::size_t i = 0; i < g.cols(); ++i) s += dy[co * g.cols() + i];
          db[co] += s;
        }
      }
      if (gx) {
        T* dx = grad_buffer(*xi).data() + b * in_size;
        if (g.pointwise()) {
          kernels::gemm_tn(g.rows(), g.cols(), cout, wi->values.data(), dy, dx, true);
        } else {
          kernels::gemm_tn(g.rows(), g.cols(), cout, wi->values.data(), dy, dcols.data(), false);
          col2im_add(dcols.data(), g, dx);
        }
      }
    }
  });
  return y;
}

// ---- pooling / resampling -------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  require_rank(x, 4, "maxpool2d");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) {
    throw DimensionError("maxpool2d: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  const auto xv = x.values();
  std::vector<T> out(b * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = xv[best];
        arg[o] = best;
      }
    }
  }
  Tensor<T> y({b, c, oh, ow}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  attach(y, "maxpool2d", {&x}, [=, arg = std::move(arg)] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += yi->grad[o];
  });
  return y;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t factor) {
  require_rank(x, 4, "avg_pool2d");
  if (factor == 0) throw InvalidArgument("avg_pool2d: factor must be positive");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % factor || w % factor) {
    throw DimensionError("avg_pool2d: extents " + shape_str(x.shape()) +
                         " not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return x;
  const std::size_t oh = h / factor, ow = w / factor;
  const T norm = T(1) / static_cast<T>(factor * factor);
  const auto xv = x.values();
  std::vector<T> out(b * c * oh * ow, T(0));
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        out[(plane * oh + y / factor) * ow + xx / factor] += xv[(plane * h + y) * w + xx];
      }
    }
  }
  for (auto& v : out) v *= norm;
  Tensor<T> y({b, c, oh, ow}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  attach(y, "avg_pool2d", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t plane = 0; plane < b * c; ++plane) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          dx[(plane * h + yy) * w + xx] +=
              norm * yi->grad[(plane * oh + yy / factor) * ow + xx / factor];
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor, UpsampleMode mode) {
  require_rank(x, 4, "upsample");
  if (factor == 0) throw InvalidArgument("upsample: factor must be positive");
  if (factor == 1) return x;
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  const Taps ty = make_taps(h, factor, mode), tx = make_taps(w, factor, mode);
  const auto xv = x.values();
  std::vector<T> out(b * c * oh * ow);
  for (std::size_t plane = 0; plane < b * c; ++plane) {
    const T* in = xv.data() + plane * h * w;
    T* dst = out.data() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const T* r0 = in + ty.i0[oy] * w;
      const T* r1 = in + ty.i1[oy] * w;
      const T wy0 = static_cast<T>(ty.w0[oy]), wy1 = static_cast<T>(ty.w1[oy]);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T wx0 = static_cast<T>(tx.w0[ox]), wx1 = static_cast<T>(tx.w1[ox]);
        const T top = wx0 * r0[tx.i0[ox]] + wx1 * r0[tx.i1[ox]];
        const T bottom = wx0 * r1[tx.i0[ox]] + wx1 * r1[tx.i1[ox]];
        dst[oy * ow + ox] = wy0 * top + wy1 * bottom;
      }
    }
  }
  Tensor<T> y({b, c, oh, ow}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  attach(y, "upsample", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t plane = 0; plane < b * c; ++plane) {
      T* d = dx.data() + plane * h * w;
      const T* g = yi->grad.data() + plane * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T wy0 = static_cast<T>(ty.w0[oy]), wy1 = static_cast<T>(ty.w1[oy]);
        T* r0 = d + ty.i0[oy] * w;
        T* r1 = d + ty.i1[oy] * w;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gv = g[oy * ow + ox];
          const T wx0 = static_cast<T>(tx.w0[ox]), wx1 = static_cast<T>(tx.w1[ox]);
          r0[tx.i0[ox]] += gv * wy0 * wx0;
          r0[tx.i1[ox]] += gv * wy0 * wx1;
          r1[tx.i0[ox]] += gv * wy1 * wx0;
          r1[tx.i1[ox]] += gv * wy1 * wx1;
        }
      }
    }
  });
  return y;
}

// ---- normalisation --------------------------------------------------------

namespace {

// x viewed as [outer, groups, inner]; every element of group g is mapped to
// (x - mean[g]) * inv_std[g]. With `batch_stats` the statistics are treated
// as functions of x in the backward pass.
template <typename T>
Tensor<T> normalize_groups(const Tensor<T>& x, std::size_t outer, std::size_t groups,
                           std::size_t inner, const std::vector<T>& mean, std::vector<T> inv_std,
                           bool batch_stats, const char* tag) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (o * groups + gi) * inner;
      const T m = mean[gi], s = inv_std[gi];
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = (xv[base + i] - m) * s;
    }
  }
  Tensor<T> y(x.shape(), std::move(out));
  ensure_finite(y, tag);
  auto xi = x.impl(), yi = y.impl();
  attach(y, tag, {&x}, [=, inv_std = std::move(inv_std)] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    const auto& g = yi->grad;
    const auto& xhat = yi->values;
    std::vector<T> sum_g(groups, T(0)), sum_gx(groups, T(0));
    if (batch_stats) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = (o * groups + gi) * inner;
          T sg = 0, sgx = 0;
          for (std::size_t i = 0; i < inner; ++i) {
            sg += g[base + i];
            sgx += g[base + i] * xhat[base + i];
          }
          sum_g[gi] += sg;
          sum_gx[gi] += sgx;
        }
      }
    }
    // dx = inv_std / n * (n g - sum(g) - xhat * sum(g xhat))
    const T n = static_cast<T>(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t base = (o * groups + gi) * inner;
        const T s = inv_std[gi];
        if (!batch_stats) {
          for (std::size_t i = 0; i < inner; ++i) dx[base + i] += g[base + i] * s;
          continue;
        }
        const T sg = sum_g[gi], sgx = sum_gx[gi];
        for (std::size_t i = 0; i < inner; ++i) {
          dx[base + i] += s / n * (n * g[base + i] - sg - xhat[base + i] * sgx);
        }
      }
    }
  });
  return y;
}

}  // namespace

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, NormParams<T>& p, bool training) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t population = b * hw;
  if (p.gamma.numel() != c || p.beta.numel() != c) {
    throw DimensionError("batch_norm2d: affine terms do not match " + std::to_string(c) +
                         " channels");
  }
  std::vector<T> mean(c, T(0)), inv_std(c);
  if (training) {
    if (population < 2) {
      throw DimensionError("batch_norm2d: training needs at least 2 values per channel, got " +
                           std::to_string(population));
    }
    const auto xv = x.values();
    std::vector<T> var(c, T(0));
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* v = xv.data() + (n * c + ch) * hw;
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += v[i];
        mean[ch] += s;
      }
    }
    for (auto& m : mean) m /= static_cast<T>(population);
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* v = xv.data() + (n * c + ch) * hw;
        const T m = mean[ch];
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += (v[i] - m) * (v[i] - m);
        var[ch] += s;
      }
    }
    for (auto& v : var) v /= static_cast<T>(population);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + p.eps);
    if (p.running_mean.defined() && p.running_var.defined()) {
      auto rm = p.running_mean.data();
      auto rv = p.running_var.data();
      const T unbias = static_cast<T>(population) / static_cast<T>(population - 1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        rm[ch] = (T(1) - p.momentum) * rm[ch] + p.momentum * mean[ch];
        rv[ch] = (T(1) - p.momentum) * rv[ch] + p.momentum * var[ch] * unbias;
      }
    }
  } else {
    if (!p.running_mean.defined() || !p.running_var.defined()) {
      throw InvalidArgument("batch_norm2d: inference mode needs running statistics");
    }
    const auto rm = p.running_mean.values();
    const auto rv = p.running_var.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = T(1) / std::sqrt(rv[ch] + p.eps);
    }
  }
  auto normalized =
      normalize_groups(x, b, c, hw, mean, std::move(inv_std), training, "batch_norm2d");
  return axis_affine(normalized, p.gamma, p.beta, 1);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormParams<T>& p) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank must be at least 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  if (p.gamma.numel() != d || p.beta.numel() != d) {
    throw DimensionError("layer_norm: affine terms do not match feature width " +
                         std::to_string(d));
  }
  const auto xv = x.values();
  std::vector<T> mean(rows, T(0)), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T m = 0;
    for (std::size_t i = 0; i < d; ++i) m += xv[r * d + i];
    m /= static_cast<T>(d);
    T v = 0;
    for (std::size_t i = 0; i < d; ++i) v += (xv[r * d + i] - m) * (xv[r * d + i] - m);
    v /= static_cast<T>(d);
    mean[r] = m;
    inv_std[r] = T(1) / std::sqrt(v + p.eps);
  }
  auto normalized = normalize_groups(x, 1, rows, d, mean, std::move(inv_std), true, "layer_norm");
  return axis_affine(normalized, p.gamma, p.beta, x.rank() - 1);
}

// ---- dense ----------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  const auto& ws = p.weight.shape();
  if (x.rank() < 1 || ws.size() != 2 || x.shape().back() != ws[0] || p.bias.numel() != ws[1]) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(ws));
  }
  const std::size_t din = ws[0], dout = ws[1], rows = x.numel() / din;
  Shape so = x.shape();
  so.back() = dout;
  std::vector<T> out(rows * dout);
  const auto bv = p.bias.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * dout);
  kernels::gemm_nn(rows, dout, din, x.values().data(), p.weight.values().data(), out.data(), true);
  Tensor<T> y(so, std::move(out));
  ensure_finite(y, "linear");
  auto xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl(), yi = y.impl();
  const bool gx = tracks(x), gw = tracks(p.weight), gb = tracks(p.bias);
  attach(y, "linear", {&x, &p.weight, &p.bias}, [=] {
    if (yi->grad.empty()) return;
    const T* g = yi->grad.data();
    if (gx) kernels::gemm_nt(rows, din, dout, g, wi->values.data(), grad_buffer(*xi).data(), true);
    if (gw) kernels::gemm_tn(din, dout, rows, xi->values.data(), g, grad_buffer(*wi).data(), true);
    if (gb) {
      auto& db = grad_buffer(*bi);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < dout; ++j) db[j] += g[r * dout + j];
      }
    }
  });
  return y;
}

// ---- activations ----------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  Tensor<T> y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  attach(y, "relu", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xi->values[i] > T(0)) dx[i] += yi->grad[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = T(0.044715);
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  Tensor<T> y(x.shape(), std::move(out));
  ensure_finite(y, "gelu");
  auto xi = x.impl(), yi = y.impl();
  attach(y, "gelu", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = xi->values[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + 3 * a * v * v);
      dx[i] += yi->grad[i] * d;
    }
  });
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("softmax: rank must be at least 1");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T* o = out.data() + r * d;
    const T m = *std::max_element(in, in + d);
    T s = 0;
    for (std::size_t i = 0; i < d; ++i) {
      o[i] = std::exp(in[i] - m);
      s += o[i];
    }
    for (std::size_t i = 0; i < d; ++i) o[i] /= s;
  }
  Tensor<T> y(x.shape(), std::move(out));
  ensure_finite(y, "softmax");
  auto xi = x.impl(), yi = y.impl();
  attach(y, "softmax", {&x}, [=] {
    if (yi->grad.empty()) return;
    auto& dx = grad_buffer(*xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = yi->grad.data() + r * d;
      const T* s = yi->values.data() + r * d;
      T dotp = 0;
      for (std::size_t i = 0; i < d; ++i) dotp += g[i] * s[i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += s[i] * (g[i] - dotp);
    }
  });
  return y;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> target) {
  require_rank(logits, 4, "cross_entropy");
  const std::size_t b = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (target.size() != b * hw) {
    throw DimensionError("cross_entropy: target has " + std::to_string(target.size()) +
                         " entries, logits " + shape_str(logits.shape()) + " need " +
                         std::to_string(b * hw));
  }
  for (const auto t : target) {
    if (t >= k) {
      throw InvalidArgument("cross_entropy: class index " + std::to_string(t) +
                            " out of range for " + std::to_string(k) + " classes");
    }
  }
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const T* z = lv.data() + n * k * hw + p;
      T m = z[0];
      for (std::size_t c = 1; c < k; ++c) m = std::max(m, z[c * hw]);
      T s = 0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * hw] - m);
      const T lse = m + std::log(s);
      total += static_cast<double>(lse - z[target[n * hw + p] * hw]);
    }
  }
  const std::size_t pixels = b * hw;
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(pixels)));
  ensure_finite(loss, "cross_entropy");
  std::vector<std::uint8_t> labels(target.begin(), target.end());
  auto li = logits.impl(), yi = loss.impl();
  attach(loss, "cross_entropy", {&logits}, [=, labels = std::move(labels)] {
    if (yi->grad.empty()) return;
    auto& dz = grad_buffer(*li);
    const T g = yi->grad[0] / static_cast<T>(pixels);
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t base = n * k * hw + p;
        const T* z = li->values.data() + base;
        T m = z[0];
        for (std::size_t c = 1; c < k; ++c) m = std::max(m, z[c * hw]);
        T s = 0;
        for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * hw] - m);
        for (std::size_t c = 0; c < k; ++c) {
          const T prob = std::exp(z[c * hw] - m) / s;
          dz[base + c * hw] += g * (prob - (c == labels[n * hw + p] ? T(1) : T(0)));
        }
      }
    }
  });
  return loss;
}

#define TRANSCLAW_INSTANTIATE(T)                                                       \
  template struct NormParams<T>;                                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Conv2dParams<T>&);                 \
  template Tensor<T> maxpool2d(const Tensor<T>&);                                      \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> upsample(const Tensor<T>&, std::size_t, UpsampleMode);            \
  template Tensor<T> batch_norm2d(const Tensor<T>&, NormParams<T>&, bool);             \
  template Tensor<T> layer_norm(const Tensor<T>&, const NormParams<T>&);               \
  template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                 \
  template Tensor<T> relu(const Tensor<T>&);                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                           \
  template Tensor<T> softmax(const Tensor<T>&);                                        \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);

TRANSCLAW_INSTANTIATE(float)
TRANSCLAW_INSTANTIATE(double)

#undef TRANSCLAW_INSTANTIATE

}  // namespace transclaw
