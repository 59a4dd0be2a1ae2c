#include "transclaw/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "transclaw/errors.hpp"
#include "transclaw/serialize.hpp"

namespace transclaw {

namespace {

constexpr int kPlacementAttempts = 200;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct Shape2d {
  bool ellipse;
  double cy, cx, a, b, angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    if (ellipse) return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    return std::abs(u) <= a && std::abs(v) <= b;
  }
  double reach() const { return std::max(a, b); }
};

}  // namespace

Sample make_phantom(const PhantomOptions& o, std::uint64_t sample_seed) {
  if (o.classes < 2 || o.classes > 255) {
    throw InvalidArgument("phantoms need 2..255 classes, got " + std::to_string(o.classes));
  }
  if (o.height < 8 || o.width < 8) throw InvalidArgument("phantom extents must be at least 8");
  if (o.channels == 0) throw InvalidArgument("phantoms need at least one channel");
  if (o.noise_level < 0) throw InvalidArgument("noise level must be non-negative");

  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t h = o.height, w = o.width;
  const double extent = static_cast<double>(std::min(h, w));

  std::vector<std::uint8_t> mask(h * w, 0);
  std::vector<double> level(o.classes);
  level[0] = 0.15 + 0.25 * unit(rng);
  for (std::size_t k = 1; k < o.classes; ++k) {
    const double centre = 0.3 + 0.55 * static_cast<double>(k) / static_cast<double>(o.classes - 1);
    level[k] = std::clamp(centre - 0.1 + 0.2 * unit(rng), 0.0, 1.0);
  }

  for (std::size_t k = 1; k < o.classes; ++k) {
    const double radius = std::max(2.0, 0.25 * extent * std::pow(0.5, static_cast<double>(k - 1)));
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Shape2d s{};
      s.ellipse = unit(rng) < 0.6;
      const double aspect = 0.75 + 0.5 * unit(rng);
      s.a = radius * (0.9 + 0.2 * unit(rng)) * std::sqrt(aspect);
      s.b = radius * (0.9 + 0.2 * unit(rng)) / std::sqrt(aspect);
      if (!s.ellipse) {
        s.a *= 0.88;
        s.b *= 0.88;
      }
      s.angle = s.ellipse ? std::numbers::pi * unit(rng) : 0.0;
      const double margin = s.reach() + 1.0;
      if (2 * margin >= extent) continue;
      s.cy = margin + (static_cast<double>(h) - 2 * margin) * unit(rng);
      s.cx = margin + (static_cast<double>(w) - 2 * margin) * unit(rng);

      std::vector<std::size_t> pixels;
      bool clash = false;
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(s.cy - margin));
      const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(s.cy + margin));
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(s.cx - margin));
      const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(s.cx + margin));
      for (auto y = std::max<std::ptrdiff_t>(y0, 0);
           y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(h) - 1) && !clash; ++y) {
        for (auto x = std::max<std::ptrdiff_t>(x0, 0);
             x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(w) - 1); ++x) {
          if (!s.contains(static_cast<double>(y), static_cast<double>(x))) continue;
          // one background pixel must separate shapes
          for (std::ptrdiff_t dy = -1; dy <= 1 && !clash; ++dy) {
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
              const auto yy = y + dy, xx = x + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                  xx >= static_cast<std::ptrdiff_t>(w)) {
                continue;
              }
              if (mask[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] != 0) {
                clash = true;
                break;
              }
            }
          }
          if (clash) break;
          pixels.push_back(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x));
        }
      }
      if (clash || pixels.empty()) continue;
      for (auto p : pixels) mask[p] = static_cast<std::uint8_t>(k);
      placed = true;
    }
    if (!placed) {
      throw InvalidArgument("could not place the class " + std::to_string(k) + " shape after " +
                            std::to_string(kPlacementAttempts) +
                            " attempts; use fewer classes, smaller shapes or a larger image");
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> image(o.channels * h * w);
  for (std::size_t c = 0; c < o.channels; ++c) {
    const double fy = 1.0 + 3.0 * unit(rng), fx = 1.0 + 3.0 * unit(rng);
    const double py = 2 * std::numbers::pi * unit(rng), px = 2 * std::numbers::pi * unit(rng);
    const double gain = 1.0 - 0.15 * static_cast<double>(c % 4);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double ty = 2 * std::numbers::pi * fy * static_cast<double>(y) / static_cast<double>(h);
        const double tx = 2 * std::numbers::pi * fx * static_cast<double>(x) / static_cast<double>(w);
        const double texture = std::sin(ty + py) * std::cos(tx + px);
        double v = gain * level[mask[y * w + x]];
        if (o.noise_level > 0) v += o.noise_level * (texture + gauss(rng));
        image[(c * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  Sample s;
  s.image = Tensor<float>({o.channels, h, w}, std::move(image));
  s.mask = std::move(mask);
  s.height = h;
  s.width = w;
  return s;
}

std::vector<Sample> generate_samples(const PhantomOptions& options) {
  std::vector<Sample> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    auto rng = derived_rng(options.seed, i, 0x706861);
    out.push_back(make_phantom(options, rng()));
  }
  return out;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split \"" + name + "\" (expected train, val or test)");
}

std::vector<std::string> Manifest::files(Split split) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.file);
  }
  return out;
}

namespace {

void write_mask_block(std::ostream& out, std::span<const std::uint8_t> mask, std::size_t h,
                      std::size_t w) {
  if (mask.size() != h * w) throw DimensionError("mask holds " + std::to_string(mask.size()) +
                                                 " values for " + std::to_string(h) + "x" +
                                                 std::to_string(w));
  binary::write_bytes(out, kMaskMagic);
  binary::write_u32(out, static_cast<std::uint32_t>(h));
  binary::write_u32(out, static_cast<std::uint32_t>(w));
  out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
}

std::vector<std::uint8_t> read_mask_block(std::istream& in, std::size_t& h, std::size_t& w) {
  binary::expect_magic(in, kMaskMagic, "mask");
  h = binary::read_u32(in, "mask height");
  w = binary::read_u32(in, "mask width");
  if (h == 0 || w == 0 || h > 65536 || w > 65536) throw FormatError("implausible mask extent");
  const std::string raw = binary::read_bytes(in, h * w, "mask payload");
  return {raw.begin(), raw.end()};
}

}  // namespace

void save_sample(const std::filesystem::path& path, const Sample& sample) {
  if (sample.image.rank() != 3 || sample.image.dim(1) != sample.height ||
      sample.image.dim(2) != sample.width || sample.mask.size() != sample.height * sample.width) {
    throw DimensionError("save_sample: image " + shape_str(sample.image.shape()) +
                         " and mask disagree");
  }
  auto out = open_output(path);
  write_tensor(out, sample.image);
  write_mask_block(out, sample.mask, sample.height, sample.width);
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

Sample load_sample(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    Sample s;
    s.image = read_tensor<float>(in);
    if (s.image.rank() != 3) {
      throw FormatError("image must be [C, H, W], got " + shape_str(s.image.shape()));
    }
    s.mask = read_mask_block(in, s.height, s.width);
    if (s.height != s.image.dim(1) || s.width != s.image.dim(2)) {
      throw FormatError("mask extent " + std::to_string(s.height) + "x" +
                        std::to_string(s.width) + " does not match image " +
                        shape_str(s.image.shape()));
    }
    return s;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask,
               std::size_t height, std::size_t width) {
  auto out = open_output(path);
  write_mask_block(out, mask, height, width);
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> load_mask(const std::filesystem::path& path, std::size_t* height,
                                    std::size_t* width) {
  auto in = open_input(path);
  std::size_t h = 0, w = 0;
  try {
    auto mask = read_mask_block(in, h, w);
    if (height) *height = h;
    if (width) *width = w;
    return mask;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_color_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask,
                     std::size_t height, std::size_t width) {
  static constexpr unsigned char kPalette[8][3] = {
      {0, 0, 0},     {230, 25, 75},  {60, 180, 75},  {255, 225, 25},
      {0, 130, 200}, {245, 130, 48}, {145, 30, 180}, {70, 240, 240}};
  if (mask.size() != height * width) throw DimensionError("save_color_mask: extent mismatch");
  auto out = open_output(path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (auto v : mask) out.write(reinterpret_cast<const char*>(kPalette[v % 8]), 3);
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

Manifest generate_phantoms(const std::filesystem::path& dir, const PhantomOptions& options) {
  if (options.count == 0) throw InvalidArgument("generate_phantoms: count must be positive");
  if (options.val_fraction < 0 || options.test_fraction < 0 ||
      options.val_fraction + options.test_fraction > 1) {
    throw InvalidArgument("generate_phantoms: split fractions must be non-negative and sum to <= 1");
  }
  auto samples = generate_samples(options);

  std::vector<std::size_t> order(options.count);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derived_rng(options.seed, 0, 0x73706c);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(options.count);
  const auto n_val = static_cast<std::size_t>(std::lround(n * options.val_fraction));
  const auto n_test = static_cast<std::size_t>(std::lround(n * options.test_fraction));
  std::vector<Split> split(options.count, Split::kTrain);
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (j < n_val) {
      split[order[j]] = Split::kVal;
    } else if (j < n_val + n_test) {
      split[order[j]] = Split::kTest;
    }
  }

  Manifest m;
  m.classes = options.classes;
  m.height = options.height;
  m.width = options.width;
  m.channels = options.channels;
  m.seed = options.seed;
  m.noise_level = options.noise_level;
  m.root = dir;
  std::error_code ec;
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::filesystem::create_directories(dir / split_name(s), ec);
    if (ec) throw IoError("cannot create " + (dir / split_name(s)).string() + ": " + ec.message());
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.tcs", i);
    const std::string rel = std::string(split_name(split[i])) + "/" + name;
    save_sample(dir / rel, samples[i]);
    m.entries.push_back({rel, split[i]});
  }
  write_manifest(m);
  return m;
}

void write_manifest(const Manifest& m) {
  nlohmann::ordered_json j;
  j["manifest_version"] = kManifestVersion;
  j["name"] = m.name;
  j["classes"] = m.classes;
  j["height"] = m.height;
  j["width"] = m.width;
  j["channels"] = m.channels;
  j["seed"] = m.seed;
  j["noise_level"] = m.noise_level;
  auto& list = j["samples"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) list.push_back({{"file", e.file}, {"split", split_name(e.split)}});
  std::ofstream out(m.root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (m.root / "manifest.json").string());
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("dataset manifest not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Manifest m;
  m.root = root;
  try {
    const auto j = nlohmann::json::parse(buf.str());
    const int version = j.at("manifest_version").get<int>();
    if (version != kManifestVersion) {
      throw FormatError("manifest version " + std::to_string(version) + " is not supported");
    }
    m.name = j.at("name").get<std::string>();
    m.classes = j.at("classes").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.channels = j.at("channels").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.noise_level = j.at("noise_level").get<double>();
    for (const auto& e : j.at("samples")) {
      m.entries.push_back({e.at("file").get<std::string>(),
                           parse_split(e.at("split").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (const auto& e : m.entries) {
    if (!std::filesystem::exists(root / e.file)) {
      throw IoError("manifest lists a missing file: " + (root / e.file).string());
    }
  }
  return m;
}

std::vector<Sample> load_split(const Manifest& manifest, Split split) {
  std::vector<Sample> out;
  for (const auto& file : manifest.files(split)) {
    auto s = load_sample(manifest.root / file);
    if (s.channels() != manifest.channels || s.height != manifest.height ||
        s.width != manifest.width) {
      throw DimensionError(file + ": image " + shape_str(s.image.shape()) +
                           " does not match the manifest");
    }
    const auto top = *std::max_element(s.mask.begin(), s.mask.end());
    if (top >= manifest.classes) {
      throw FormatError(file + ": mask holds class " + std::to_string(top) + " but the manifest has " +
                        std::to_string(manifest.classes) + " classes");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch) {
  if (count == 0) throw InvalidArgument("batch_order: the split is empty");
  if (batch_size == 0) throw InvalidArgument("batch_order: batch size must be positive");
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = derived_rng(seed, epoch, 0x626174);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return out;
}

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InvalidArgument("make_batch: no indices");
  const auto& first = samples.at(indices.front());
  const std::size_t c = first.channels(), h = first.height, w = first.width;
  std::vector<T> images;
  images.reserve(indices.size() * c * h * w);
  Batch<T> b;
  b.indices = indices;
  b.masks.reserve(indices.size() * h * w);
  for (auto i : indices) {
    const auto& s = samples.at(i);
    if (s.channels() != c || s.height != h || s.width != w) {
      throw DimensionError("make_batch: samples have different extents");
    }
    for (float v : s.image.values()) images.push_back(static_cast<T>(v));
    b.masks.insert(b.masks.end(), s.mask.begin(), s.mask.end());
  }
  b.images = Tensor<T>({indices.size(), c, h, w}, std::move(images));
  return b;
}

template <typename T>
std::vector<Batch<T>> batch_iter(const std::vector<Sample>& samples, std::size_t batch_size,
                                 std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Batch<T>> out;
  for (const auto& idx : batch_order(samples.size(), batch_size, seed, epoch)) {
    out.push_back(make_batch<T>(samples, idx));
  }
  return out;
}

template Batch<float> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Batch<double> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&);
template std::vector<Batch<float>> batch_iter(const std::vector<Sample>&, std::size_t,
                                              std::uint64_t, std::uint64_t);
template std::vector<Batch<double>> batch_iter(const std::vector<Sample>&, std::size_t,
                                               std::uint64_t, std::uint64_t);

}  // namespace transclaw
