#include "transclaw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "transclaw/errors.hpp"

namespace transclaw {

namespace {

void require_extent(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                    std::size_t height, std::size_t width, const char* op) {
  if (a.size() != height * width || b.size() != height * width) {
    throw DimensionError(std::string(op) + ": masks must hold " + std::to_string(height) + "x" +
                         std::to_string(width) + " pixels, got " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
  }
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over one line.
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -INFINITY;
  z[1] = INFINITY;
  auto meet = [&](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = INFINITY;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

struct Directed {
  std::vector<double> a_to_b;
  std::vector<double> b_to_a;
};

std::vector<std::uint8_t> boundary_mask(std::span<const std::uint8_t> mask, std::size_t h,
                                        std::size_t w) {
  std::vector<std::uint8_t> out(h * w, 0);
  for (auto p : boundary_pixels(mask, h, w)) out[p.y * w + p.x] = 1;
  return out;
}

std::vector<double> directed(const std::vector<Pixel>& from, std::span<const std::uint8_t> to,
                             std::size_t h, std::size_t w) {
  const auto dist = squared_distance_transform(to, h, w);
  std::vector<double> out;
  out.reserve(from.size());
  for (auto p : from) out.push_back(std::sqrt(static_cast<double>(dist[p.y * w + p.x])));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::optional<double>> dice_per_class(std::span<const std::uint8_t> pred,
                                                  std::span<const std::uint8_t> truth,
                                                  std::size_t classes) {
  if (pred.size() != truth.size()) {
    throw DimensionError("dice_per_class: prediction has " + std::to_string(pred.size()) +
                         " pixels, truth has " + std::to_string(truth.size()));
  }
  std::vector<std::size_t> p(classes, 0), t(classes, 0), both(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes || truth[i] >= classes) {
      throw InvalidArgument("dice_per_class: class index out of range");
    }
    ++p[pred[i]];
    ++t[truth[i]];
    if (pred[i] == truth[i]) ++both[pred[i]];
  }
  std::vector<std::optional<double>> out(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    if (p[k] + t[k] == 0) continue;
    out[k] = 2.0 * static_cast<double>(both[k]) / static_cast<double>(p[k] + t[k]);
  }
  return out;
}

std::vector<Pixel> boundary_pixels(std::span<const std::uint8_t> mask, std::size_t h,
                                   std::size_t w) {
  if (mask.size() != h * w) throw DimensionError("boundary_pixels: mask extent mismatch");
  auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
        x >= static_cast<std::ptrdiff_t>(w)) {
      return false;
    }
    return mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] != 0;
  };
  std::vector<Pixel> out;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[y * w + x] == 0) continue;
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      if (!inside(yy - 1, xx) || !inside(yy + 1, xx) || !inside(yy, xx - 1) ||
          !inside(yy, xx + 1)) {
        out.push_back({y, x});
      }
    }
  }
  return out;
}

std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> features,
                                                     std::size_t h, std::size_t w) {
  if (features.size() != h * w) throw DimensionError("distance transform: extent mismatch");
  if (std::none_of(features.begin(), features.end(), [](auto v) { return v != 0; })) {
    return std::vector<std::int64_t>(h * w, -1);
  }
  // Larger than any real squared distance, small enough to stay exact.
  const double far = 4.0 * static_cast<double>((h + w) * (h + w)) + 1.0;
  std::vector<double> grid(h * w);
  for (std::size_t i = 0; i < h * w; ++i) grid[i] = features[i] ? 0.0 : far;
  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (std::size_t x = 0; x < w; ++x) {
    f.resize(h);
    d.resize(h);
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    distance_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    f.assign(grid.begin() + static_cast<std::ptrdiff_t>(y * w),
             grid.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
    d.resize(w);
    distance_1d(f, d, v, z);
    std::copy(d.begin(), d.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  std::vector<std::int64_t> out(h * w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = std::llround(grid[i]);
  return out;
}

std::optional<HausdorffStats> hausdorff(std::span<const std::uint8_t> pred,
                                        std::span<const std::uint8_t> truth, std::size_t h,
                                        std::size_t w) {
  require_extent(pred, truth, h, w, "hausdorff");
  const auto bp = boundary_pixels(pred, h, w);
  const auto bt = boundary_pixels(truth, h, w);
  if (bp.empty() || bt.empty()) return std::nullopt;
  Directed dd;
  dd.a_to_b = directed(bp, boundary_mask(truth, h, w), h, w);
  dd.b_to_a = directed(bt, boundary_mask(pred, h, w), h, w);

  HausdorffStats s{};
  s.average = std::max(mean_of(dd.a_to_b), mean_of(dd.b_to_a));
  std::vector<double> pooled = dd.a_to_b;
  pooled.insert(pooled.end(), dd.b_to_a.begin(), dd.b_to_a.end());
  std::sort(pooled.begin(), pooled.end());
  const std::size_t rank = (95 * pooled.size() + 99) / 100;  // ceil(0.95 n)
  s.hd95 = pooled[rank - 1];
  s.maximum = pooled.back();
  return s;
}

std::optional<double> average_hausdorff(std::span<const std::uint8_t> pred,
                                        std::span<const std::uint8_t> truth, std::size_t h,
                                        std::size_t w) {
  auto s = hausdorff(pred, truth, h, w);
  if (!s) return std::nullopt;
  return s->average;
}

std::optional<double> hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                           std::size_t h, std::size_t w) {
  auto s = hausdorff(pred, truth, h, w);
  if (!s) return std::nullopt;
  return s->hd95;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "class,dice,ahd,hd95\n";
  for (const auto& r : rows) {
    out << r.label << ',' << format_metric(r.dice) << ',' << format_metric(r.ahd) << ','
        << format_metric(r.hd95) << '\n';
  }
  out << "mean," << format_metric(mean_dice) << ',' << format_metric(mean_ahd) << ','
      << format_metric(mean_hd95) << '\n';
  return out.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", "class", "dice", "ahd", "hd95");
  out << line;
  auto row = [&](const std::string& label, const std::optional<double>& d,
                 const std::optional<double>& a, const std::optional<double>& h) {
    std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", label.c_str(),
                  format_metric(d).c_str(), format_metric(a).c_str(), format_metric(h).c_str());
    out << line;
  };
  for (const auto& r : rows) row(r.label, r.dice, r.ahd, r.hd95);
  row("mean", mean_dice, mean_ahd, mean_hd95);
  out << "\nsamples " << samples << ", classes with dice " << dice_classes << "/" << rows.size()
      << ", classes with hd " << hd_classes << "/" << rows.size() << "\n\n";

  std::snprintf(line, sizeof line, "%-10s %-10s", "DSC", "HD");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, " %-10s", r.label.c_str());
    out << line;
  }
  out << '\n';
  std::snprintf(line, sizeof line, "%-10s %-10s", format_metric(mean_dice).c_str(),
                format_metric(mean_ahd).c_str());
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, " %-10s", format_metric(r.dice).c_str());
    out << line;
  }
  out << '\n';
  return out.str();
}

EvalReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& preds,
                          const std::vector<std::vector<std::uint8_t>>& truths,
                          std::size_t classes, std::size_t h, std::size_t w) {
  if (preds.size() != truths.size()) {
    throw DimensionError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(truths.size()) + " masks");
  }
  if (preds.empty()) throw InvalidArgument("evaluate: no samples");
  if (classes < 2) throw InvalidArgument("evaluate: need at least 2 classes");
  const std::size_t fg = classes - 1;
  std::vector<double> dice_sum(fg, 0), ahd_sum(fg, 0), hd95_sum(fg, 0);
  std::vector<std::size_t> dice_n(fg, 0), hd_n(fg, 0);
  std::vector<std::uint8_t> pm(h * w), tm(h * w);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    require_extent(preds[s], truths[s], h, w, "evaluate");
    const auto dice = dice_per_class(preds[s], truths[s], classes);
    for (std::size_t k = 1; k < classes; ++k) {
      if (dice[k]) {
        dice_sum[k - 1] += *dice[k];
        ++dice_n[k - 1];
      }
      for (std::size_t i = 0; i < h * w; ++i) {
        pm[i] = preds[s][i] == k;
        tm[i] = truths[s][i] == k;
      }
      if (auto hd = hausdorff(pm, tm, h, w)) {
        ahd_sum[k - 1] += hd->average;
        hd95_sum[k - 1] += hd->hd95;
        ++hd_n[k - 1];
      }
    }
  }
  EvalReport r;
  r.classes = classes;
  r.samples = preds.size();
  double md = 0, ma = 0, mh = 0;
  for (std::size_t k = 0; k < fg; ++k) {
    ClassReport c;
    c.label = "class_" + std::to_string(k + 1);
    c.dice_samples = dice_n[k];
    c.hd_samples = hd_n[k];
    if (dice_n[k] > 0) {
      c.dice = dice_sum[k] / static_cast<double>(dice_n[k]);
      md += *c.dice;
      ++r.dice_classes;
    }
    if (hd_n[k] > 0) {
      c.ahd = ahd_sum[k] / static_cast<double>(hd_n[k]);
      c.hd95 = hd95_sum[k] / static_cast<double>(hd_n[k]);
      ma += *c.ahd;
      mh += *c.hd95;
      ++r.hd_classes;
    }
    r.rows.push_back(std::move(c));
  }
  if (r.dice_classes > 0) r.mean_dice = md / static_cast<double>(r.dice_classes);
  if (r.hd_classes > 0) {
    r.mean_ahd = ma / static_cast<double>(r.hd_classes);
    r.mean_hd95 = mh / static_cast<double>(r.hd_classes);
  }
  return r;
}

template <typename T>
std::vector<std::uint8_t> argmax_classes(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw DimensionError("argmax_classes: logits must be [B, K, H, W]");
  const std::size_t b = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (k > 256) throw InvalidArgument("argmax_classes: more than 256 classes");
  const auto v = logits.values();
  std::vector<std::uint8_t> out(b * hw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      T top = v[n * k * hw + i];
      for (std::size_t c = 1; c < k; ++c) {
        const T x = v[(n * k + c) * hw + i];
        if (x > top) {
          top = x;
          best = c;
        }
      }
      out[n * hw + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<std::uint8_t>> predict_masks(TransClawUNet<T>& model,
                                                     const std::vector<Sample>& samples,
                                                     std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("predict: batch size must be positive");
  NoGradGuard guard;
  std::vector<std::vector<std::uint8_t>> out;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - i));
    std::iota(idx.begin(), idx.end(), i);
    auto batch = make_batch<T>(samples, idx);
    const auto labels = argmax_classes(model.forward(batch.images, false));
    const std::size_t hw = samples[i].height * samples[i].width;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.emplace_back(labels.begin() + static_cast<std::ptrdiff_t>(j * hw),
                       labels.begin() + static_cast<std::ptrdiff_t>((j + 1) * hw));
    }
  }
  return out;
}

template <typename T>
EvalReport evaluate(TransClawUNet<T>& model, const std::vector<Sample>& samples,
                    std::size_t batch_size) {
  if (samples.empty()) throw InvalidArgument("evaluate: no samples");
  const auto& c = model.config();
  for (const auto& s : samples) {
    if (s.height != c.height || s.width != c.width || s.channels() != c.in_channels) {
      throw ConfigError("evaluate: sample " + shape_str(s.image.shape()) +
                        " does not match the model input");
    }
  }
  const auto preds = predict_masks(model, samples, batch_size);
  std::vector<std::vector<std::uint8_t>> truths;
  truths.reserve(samples.size());
  for (const auto& s : samples) truths.push_back(s.mask);
  return evaluate_masks(preds, truths, c.num_classes, c.height, c.width);
}

template std::vector<std::uint8_t> argmax_classes(const Tensor<float>&);
template std::vector<std::uint8_t> argmax_classes(const Tensor<double>&);
template std::vector<std::vector<std::uint8_t>> predict_masks(TransClawUNet<float>&,
                                                              const std::vector<Sample>&,
                                                              std::size_t);
template std::vector<std::vector<std::uint8_t>> predict_masks(TransClawUNet<double>&,
                                                              const std::vector<Sample>&,
                                                              std::size_t);
template EvalReport evaluate(TransClawUNet<float>&, const std::vector<Sample>&, std::size_t);
template EvalReport evaluate(TransClawUNet<double>&, const std::vector<Sample>&, std::size_t);

}  // namespace transclaw
