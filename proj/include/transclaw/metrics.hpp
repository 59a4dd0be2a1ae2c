#pragma once

// Segmentation metrics on class-index maps. Hausdorff statistics are taken
// over boundary pixels: mask pixels 4-adjacent to a non-mask pixel, where
// pixels outside the image count as non-mask. Distances are in pixels.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transclaw/data.hpp"
#include "transclaw/model.hpp"

namespace transclaw {

// DSC_k = 2|P_k ∩ T_k| / (|P_k| + |T_k|); nullopt when both are empty.
std::vector<std::optional<double>> dice_per_class(std::span<const std::uint8_t> pred,
                                                  std::span<const std::uint8_t> truth,
                                                  std::size_t classes);

struct Pixel {
  std::size_t y, x;
  bool operator==(const Pixel&) const = default;
};

// Boundary of the binary mask (nonzero = inside), row-major order.
std::vector<Pixel> boundary_pixels(std::span<const std::uint8_t> mask, std::size_t height,
                                   std::size_t width);

// Squared Euclidean distance from every pixel to the nearest nonzero pixel of
// `features`; all entries are -1 when there is none.
std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> features,
                                                     std::size_t height, std::size_t width);

struct HausdorffStats {
  double average;  // max of the two directed mean boundary distances
  double hd95;     // nearest-rank 95th percentile of the pooled directed distances
  double maximum;
};

// nullopt when either mask is empty.
std::optional<HausdorffStats> hausdorff(std::span<const std::uint8_t> pred,
                                        std::span<const std::uint8_t> truth, std::size_t height,
                                        std::size_t width);
std::optional<double> average_hausdorff(std::span<const std::uint8_t> pred,
                                        std::span<const std::uint8_t> truth, std::size_t height,
                                        std::size_t width);
std::optional<double> hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                           std::size_t height, std::size_t width);

struct ClassReport {
  std::string label;
  std::optional<double> dice;
  std::optional<double> ahd;
  std::optional<double> hd95;
  std::size_t dice_samples = 0;  // samples on which dice was defined
  std::size_t hd_samples = 0;
};

// Foreground classes only (class 0 is background).
struct EvalReport {
  std::size_t classes = 0;
  std::size_t samples = 0;
  std::vector<ClassReport> rows;
  std::optional<double> mean_dice;
  std::optional<double> mean_ahd;
  std::optional<double> mean_hd95;
  std::size_t dice_classes = 0;  // classes entering mean_dice
  std::size_t hd_classes = 0;

  // class,dice,ahd,hd95 rows plus a "mean" row; undefined values are "n/a".
  std::string to_csv() const;
  // Aligned table with the same columns, then a summary line ordered as
  // mean DSC, mean HD, per-class DSC.
  std::string to_text() const;
};

std::string format_metric(const std::optional<double>& v);

// Per-class values are averaged over the samples where they are defined,
// means over the classes where those averages exist.
EvalReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& preds,
                          const std::vector<std::vector<std::uint8_t>>& truths,
                          std::size_t classes, std::size_t height, std::size_t width);

// Per-pixel argmax over the class axis of [B, K, H, W] logits; B*H*W labels.
template <typename T>
std::vector<std::uint8_t> argmax_classes(const Tensor<T>& logits);

// Inference-mode predictions, one mask per sample, in sample order.
template <typename T>
std::vector<std::vector<std::uint8_t>> predict_masks(TransClawUNet<T>& model,
                                                     const std::vector<Sample>& samples,
                                                     std::size_t batch_size = 4);

template <typename T>
EvalReport evaluate(TransClawUNet<T>& model, const std::vector<Sample>& samples,
                    std::size_t batch_size = 4);

}  // namespace transclaw
