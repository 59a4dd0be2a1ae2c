#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "transclaw/model.hpp"
#include "transclaw/tensor.hpp"

namespace tctest {

template <typename T>
transclaw::Tensor<T> random_tensor(transclaw::Shape shape, std::uint64_t seed, double lo = -1.0,
                                   double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(transclaw::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return transclaw::Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
transclaw::Tensor<T> leaf(transclaw::Shape shape, std::vector<T> values) {
  transclaw::Tensor<T> t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Small model used across tests: 16x16 input, two conv levels.
inline transclaw::ModelConfig tiny_config() {
  transclaw::ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.num_classes = 3;
  c.conv_levels = 2;
  c.base_channels = 4;
  c.patch_size = 1;
  c.transformer_layers = 1;
  c.heads = 2;
  c.model_width = 8;
  c.mlp_width = 16;
  c.bottleneck_channels = 8;
  c.skips = 2;
  return c;
}

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](T x, T y) {
           return std::memcmp(&x, &y, sizeof(T)) == 0;
         });
}

}  // namespace tctest
