#pragma once

// Direct reference computations shared by the unit tests and the acceptance
// runner. Deliberately naive: nested loops in doubles or exact integers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "transclaw/metrics.hpp"
#include "transclaw/model.hpp"

namespace tctest {

// Plain scaled-dot-product attention with one head, in doubles.
inline std::vector<double> single_head_oracle(const transclaw::Tensor<float>& z,
                                              const transclaw::AttentionParams<float>& p) {
  const std::size_t n = z.dim(1), d = z.dim(2);
  auto project = [&](const transclaw::LinearParams<float>& l, const std::vector<double>& in) {
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = l.bias.values()[j];
        for (std::size_t k = 0; k < d; ++k) s += in[i * d + k] * l.weight.values()[k * d + j];
        out[i * d + j] = s;
      }
    return out;
  };
  const std::vector<double> in(z.values().begin(), z.values().end());
  const auto q = project(p.query, in), k = project(p.key, in), v = project(p.value, in);
  std::vector<double> heads(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double m = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      m = std::max(m, s[j]);
    }
    double total = 0;
    for (auto& e : s) total += (e = std::exp(e - m));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < d; ++t) heads[i * d + t] += s[j] / total * v[j * d + t];
  }
  return project(p.output, heads);
}

using Mask = std::vector<std::uint8_t>;

// Random blobs: a few filled rectangles plus scattered pixels.
template <typename Rng>
Mask random_mask(Rng& rng, std::size_t h, std::size_t w) {
  Mask m(h * w, 0);
  const int rects = static_cast<int>(rng() % 4);
  for (int r = 0; r < rects; ++r) {
    const std::size_t y0 = rng() % h, x0 = rng() % w;
    const std::size_t y1 = std::min(h, y0 + 1 + rng() % 8), x1 = std::min(w, x0 + 1 + rng() % 8);
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) m[y * w + x] = 1;
  }
  const int dots = static_cast<int>(rng() % 6);
  for (int d = 0; d < dots; ++d) m[(rng() % h) * w + rng() % w] = 1;
  return m;
}

// Mask pixels with a 4-neighbour outside the mask or the image.
inline std::vector<transclaw::Pixel> brute_boundary(const Mask& m, std::size_t h, std::size_t w) {
  std::vector<transclaw::Pixel> out;
  auto in = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) &&
           m[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const long Y = static_cast<long>(y), X = static_cast<long>(x);
      if (in(Y, X) && (!in(Y - 1, X) || !in(Y + 1, X) || !in(Y, X - 1) || !in(Y, X + 1)))
        out.push_back({y, x});
    }
  return out;
}

// Distance from each pixel of `a` to its nearest pixel of `b`, all pairs.
inline std::vector<double> brute_directed(const std::vector<transclaw::Pixel>& a,
                                          const std::vector<transclaw::Pixel>& b) {
  std::vector<double> out;
  for (auto p : a) {
    long best = -1;
    for (auto q : b) {
      const long dy = static_cast<long>(p.y) - static_cast<long>(q.y);
      const long dx = static_cast<long>(p.x) - static_cast<long>(q.x);
      const long d2 = dy * dy + dx * dx;
      if (best < 0 || d2 < best) best = d2;
    }
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
  return out;
}

inline double brute_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct BruteHausdorff {
  double average, hd95, maximum;
};

inline BruteHausdorff brute_hausdorff(const std::vector<transclaw::Pixel>& bp,
                                      const std::vector<transclaw::Pixel>& bt) {
  const auto ab = brute_directed(bp, bt), ba = brute_directed(bt, bp);
  std::vector<double> pooled = ab;
  pooled.insert(pooled.end(), ba.begin(), ba.end());
  std::sort(pooled.begin(), pooled.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(pooled.size())));
  return {std::max(brute_mean(ab), brute_mean(ba)), pooled[rank - 1], pooled.back()};
}

inline double brute_dice(const Mask& p, const Mask& t, std::uint8_t k, bool* defined) {
  std::size_t np = 0, nt = 0, both = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    np += p[i] == k;
    nt += t[i] == k;
    both += p[i] == k && t[i] == k;
  }
  *defined = np + nt > 0;
  return *defined ? 2.0 * static_cast<double>(both) / static_cast<double>(np + nt) : 0.0;
}

}  // namespace tctest
