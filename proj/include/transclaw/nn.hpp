#pragma once

// Differentiable neural-network operators built on the tensor tape.
// Feature maps are NCHW; token sequences are [..., D].

#include <cstddef>
#include <cstdint>
#include <span>

#include "transclaw/tensor.hpp"

namespace transclaw {

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [C_out, C_in, k, k]
  Tensor<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

template <typename T>
struct NormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;  // batch norm only
  Tensor<T> running_var;   // batch norm only
  T momentum = T(0.1);
  T eps = T(1e-5);

  // gamma = 1, beta = 0; running statistics (0 mean, unit variance) when
  // `with_running_stats`.
  static NormParams identity(std::size_t features, bool with_running_stats);
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [D_in, D_out]
  Tensor<T> bias;    // [D_out]
};

enum class UpsampleMode { kBilinear, kNearest };

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p);

// 2x2 window, stride 2. Ties go to the first element in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x);

// Mean over non-overlapping factor x factor windows.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t factor);

// Integer-factor upsampling. Bilinear uses the half-pixel (align-corners =
// false) source mapping with edge clamping.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor, UpsampleMode mode);

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  return upsample(x, 2, UpsampleMode::kBilinear);
}

// Training mode normalises with the batch statistics of each channel and
// blends them into the running statistics (unbiased variance); inference
// mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, NormParams<T>& p, bool training);

// Normalises over the last axis of each row, then applies the affine terms.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormParams<T>& p);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Over the last axis, with row-max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// Mean over pixels of -log softmax(logits)[target]. logits [B, K, H, W],
// target holds B*H*W class indices in row-major order.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> target);

}  // namespace transclaw
