#pragma once

// Synthetic phantom segmentation data: generation, sample files, manifests
// and seeded batching.
//
// Sample file: a "TCT1" image tensor [C, H, W] followed by a mask block
//   "TCM1" | u32 H | u32 W | H*W u8 class indices.
// Dataset directory: manifest.json at the root, samples under train/, val/
// and test/.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transclaw/tensor.hpp"

namespace transclaw {

inline constexpr std::string_view kMaskMagic = "TCM1";
inline constexpr int kManifestVersion = 1;

struct Sample {
  Tensor<float> image;  // [C, H, W], intensities in [0, 1]
  std::vector<std::uint8_t> mask;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t channels() const { return image.dim(0); }
};

struct PhantomOptions {
  std::size_t count = 32;
  std::size_t classes = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
  double noise_level = 0.05;
  double val_fraction = 0.25;
  double test_fraction = 0.0;
};

// One phantom. Shapes are placed largest first; class k's shape is smaller
// than class k-1's. Throws InvalidArgument if a shape cannot be placed.
Sample make_phantom(const PhantomOptions& options, std::uint64_t sample_seed);

// `options.count` phantoms, sample i drawn from a seed derived from
// (options.seed, i).
std::vector<Sample> generate_samples(const PhantomOptions& options);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct ManifestEntry {
  std::string file;  // relative to the dataset root
  Split split;
};

struct Manifest {
  std::string name = "phantoms";
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  double noise_level = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;

  std::vector<std::string> files(Split split) const;
};

void save_sample(const std::filesystem::path& path, const Sample& sample);
Sample load_sample(const std::filesystem::path& path);

// A bare mask block, as written by predictions.
void save_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask,
               std::size_t height, std::size_t width);
std::vector<std::uint8_t> load_mask(const std::filesystem::path& path, std::size_t* height = nullptr,
                                    std::size_t* width = nullptr);

// Binary PPM with one fixed colour per class.
void save_color_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask,
                     std::size_t height, std::size_t width);

// Writes the samples and manifest.json under `dir`; splits are assigned by a
// seeded permutation.
Manifest generate_phantoms(const std::filesystem::path& dir, const PhantomOptions& options);

void write_manifest(const Manifest& manifest);
// Parses root/manifest.json and checks that every listed file exists.
Manifest read_manifest(const std::filesystem::path& root);

// Loads every sample of a split and validates extents and class indices
// against the manifest.
std::vector<Sample> load_split(const Manifest& manifest, Split split);

// Index batches for one epoch: a permutation keyed by (seed, epoch), cut into
// runs of `batch_size`; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch);

template <typename T>
struct Batch {
  Tensor<T> images;                 // [B, C, H, W]
  std::vector<std::uint8_t> masks;  // B*H*W
  std::vector<std::size_t> indices;
};

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

// All batches of one epoch.
template <typename T>
std::vector<Batch<T>> batch_iter(const std::vector<Sample>& samples, std::size_t batch_size,
                                 std::uint64_t seed, std::uint64_t epoch);

}  // namespace transclaw
