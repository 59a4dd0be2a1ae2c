#include "transclaw/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"

namespace transclaw {

using json = nlohmann::json;

// ---- configuration --------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (height == 0 || width == 0) fail("height and width must be positive");
  if (in_channels == 0) fail("in_channels must be positive");
  if (num_classes < 2 || num_classes > 255) fail("num_classes must be in [2, 255]");
  if (conv_levels == 0 || conv_levels > 8) fail("conv_levels must be in [1, 8]");
  if (base_channels == 0) fail("base_channels must be positive");
  if (patch_size == 0) fail("patch_size must be positive");
  const std::size_t unit = effective_patch();
  if (height % unit || width % unit) {
    std::ostringstream os;
    os << "height and width (" << height << "x" << width << ") must be divisible by "
       << "2^conv_levels * patch_size = " << unit;
    fail(os.str());
  }
  if (heads == 0 || model_width == 0 || model_width % heads) {
    fail("model_width (" + std::to_string(model_width) + ") must be divisible by heads (" +
         std::to_string(heads) + ")");
  }
  if (mlp_width == 0) fail("mlp_width must be positive");
  if (bottleneck_channels == 0) fail("bottleneck_channels must be positive");
  if (skips > conv_levels) {
    fail("skips (" + std::to_string(skips) + ") must not exceed conv_levels (" +
         std::to_string(conv_levels) + ")");
  }
}

namespace {

const char* mode_name(UpsampleMode m) {
  return m == UpsampleMode::kBilinear ? "bilinear" : "nearest";
}

json config_document(const ModelConfig& c) {
  return json{{"config_version", kConfigVersion},
              {"height", c.height},
              {"width", c.width},
              {"in_channels", c.in_channels},
              {"num_classes", c.num_classes},
              {"conv_levels", c.conv_levels},
              {"base_channels", c.base_channels},
              {"patch_size", c.patch_size},
              {"transformer_layers", c.transformer_layers},
              {"heads", c.heads},
              {"model_width", c.model_width},
              {"mlp_width", c.mlp_width},
              {"bottleneck_channels", c.bottleneck_channels},
              {"skips", c.skips},
              {"upsample_mode", mode_name(c.upsample_mode)},
              {"position_embedding", c.position_embedding},
              {"include_same_level_encoder", c.include_same_level_encoder}};
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_document(config).dump(2); }

ModelConfig config_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("model config must be a JSON object");
  ModelConfig c;
  const auto known = config_document(c);
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw FormatError("unknown model config key '" + key + "'");
  }
  if (doc.contains("config_version") && doc["config_version"] != kConfigVersion) {
    throw FormatError("unsupported model config version " + doc["config_version"].dump());
  }
  try {
    auto read = [&](const char* key, std::size_t& field) {
      if (doc.contains(key)) field = doc[key].get<std::size_t>();
    };
    read("height", c.height);
    read("width", c.width);
    read("in_channels", c.in_channels);
    read("num_classes", c.num_classes);
    read("conv_levels", c.conv_levels);
    read("base_channels", c.base_channels);
    read("patch_size", c.patch_size);
    read("transformer_layers", c.transformer_layers);
    read("heads", c.heads);
    read("model_width", c.model_width);
    read("mlp_width", c.mlp_width);
    read("bottleneck_channels", c.bottleneck_channels);
    read("skips", c.skips);
    if (doc.contains("upsample_mode")) {
      const auto mode = doc["upsample_mode"].get<std::string>();
      if (mode == "bilinear") {
        c.upsample_mode = UpsampleMode::kBilinear;
      } else if (mode == "nearest") {
        c.upsample_mode = UpsampleMode::kNearest;
      } else {
        throw FormatError("upsample_mode must be 'bilinear' or 'nearest', got '" + mode + "'");
      }
    }
    if (doc.contains("position_embedding")) {
      c.position_embedding = doc["position_embedding"].get<bool>();
    }
    if (doc.contains("include_same_level_encoder")) {
      c.include_same_level_encoder = doc["include_same_level_encoder"].get<bool>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config has a value of the wrong type: ") + e.what());
  }
  return c;
}

std::string config_difference(const ModelConfig& expected, const ModelConfig& actual) {
  const auto a = config_document(expected), b = config_document(actual);
  std::ostringstream os;
  for (const auto& [key, value] : a.items()) {
    if (b[key] != value) {
      if (os.tellp() > 0) os << ", ";
      os << key << ": expected " << value.dump() << ", got " << b[key].dump();
    }
  }
  return os.str();
}

// ---- attention ------------------------------------------------------------

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& z, const AttentionParams<T>& p,
                               std::size_t heads, Tensor<T>* weights) {
  if (z.rank() != 3) throw DimensionError("attention: expected [B, n, d], got " + shape_str(z.shape()));
  const std::size_t b = z.dim(0), n = z.dim(1), d = z.dim(2);
  if (heads == 0 || d % heads) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  auto split = [&](const Tensor<T>& t) {
    return permute(reshape(t, {b, n, heads, dk}), {0, 2, 1, 3});  // [B, h, n, dk]
  };
  const auto q = split(linear(z, p.query));
  const auto k = split(linear(z, p.key));
  const auto v = split(linear(z, p.value));
  const auto scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(dk)));
  const auto attn = softmax(scores);
  if (weights) *weights = attn;
  const auto heads_out = matmul(attn, v);                                   // [B, h, n, dk]
  const auto merged = reshape(permute(heads_out, {0, 2, 1, 3}), {b, n, d});  // concat heads
  return linear(merged, p.output);
}

// ---- construction ---------------------------------------------------------

namespace {

template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(v));
  }

  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(v));
  }

  // He-uniform for layers followed by a ReLU path; `gain` 1 gives the
  // 1/sqrt(fan_in) bound used for output projections.
  Conv2dParams<T> conv(std::size_t cin, std::size_t cout, std::size_t k, bool relu_gain = true) {
    const double fan_in = static_cast<double>(cin * k * k);
    Conv2dParams<T> p;
    p.weight = uniform({cout, cin, k, k}, relu_gain ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in));
    p.bias = Tensor<T>::zeros({cout});
    p.padding = k / 2;
    return p;
  }

  LinearParams<T> linear(std::size_t din, std::size_t dout) {
    LinearParams<T> p;
    p.weight = uniform({din, dout}, std::sqrt(6.0 / static_cast<double>(din + dout)));
    p.bias = Tensor<T>::zeros({dout});
    return p;
  }

  ConvUnit<T> unit(std::size_t cin, std::size_t cout) {
    return ConvUnit<T>{conv(cin, cout, 3), NormParams<T>::identity(cout, true)};
  }

  ConvBlock<T> block(std::size_t cin, std::size_t cout) {
    auto first = unit(cin, cout);
    auto second = unit(cout, cout);
    return ConvBlock<T>{std::move(first), std::move(second)};
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

template <typename T>
TransClawUNet<T>::TransClawUNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  Initializer<T> init(seed);

  std::size_t cin = c.in_channels;
  for (std::size_t level = 1; level <= c.conv_levels; ++level) {
    encoder_.push_back(init.block(cin, c.level_channels(level)));
    cin = c.level_channels(level);
  }

  const std::size_t patch_len = cin * c.patch_size * c.patch_size;
  embed_ = init.linear(patch_len, c.model_width);
  if (c.position_embedding) {
    position_ = init.normal({c.token_count(), c.model_width}, 0.02);
    position_.set_requires_grad(true);
  }
  for (std::size_t l = 0; l < c.transformer_layers; ++l) {
    TransformerLayer<T> layer;
    layer.norm1 = NormParams<T>::identity(c.model_width, false);
    layer.attention.query = init.linear(c.model_width, c.model_width);
    layer.attention.key = init.linear(c.model_width, c.model_width);
    layer.attention.value = init.linear(c.model_width, c.model_width);
    layer.attention.output = init.linear(c.model_width, c.model_width);
    layer.norm2 = NormParams<T>::identity(c.model_width, false);
    layer.fc1 = init.linear(c.model_width, c.mlp_width);
    layer.fc2 = init.linear(c.mlp_width, c.model_width);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = NormParams<T>::identity(c.model_width, false);
  bottleneck_ = init.unit(c.model_width, c.bottleneck_channels);

  up_.resize(c.conv_levels);
  std::size_t up_in = c.bottleneck_channels;
  for (std::size_t level = c.conv_levels; level >= 1 && c.connections_enabled(level); --level) {
    up_[level - 1] = init.unit(up_in, c.level_channels(level));
    up_in = c.level_channels(level);
  }

  const std::size_t n_levels = c.conv_levels + 1;
  const std::size_t grid = c.grid_height();
  decoder_.resize(c.conv_levels);
  for (std::size_t level = c.conv_levels; level >= 1; --level) {
    auto& dl = decoder_[level - 1];
    const std::size_t width = c.level_channels(level);
    struct Pending {
      SourceKind kind;
      std::size_t level, factor, channels;
    };
    std::vector<Pending> pending;
    if (c.connections_enabled(level)) {
      const std::size_t last_encoder = c.include_same_level_encoder ? level : level - 1;
      for (std::size_t k = 1; k <= last_encoder; ++k) {
        pending.push_back({SourceKind::kEncoder, k, std::size_t{1} << (level - k),
                           c.level_channels(k)});
      }
      pending.push_back({SourceKind::kUpPath, level, 1, c.level_channels(level)});
    }
    for (std::size_t k = level + 1; k <= c.conv_levels; ++k) {
      pending.push_back({SourceKind::kDecoder, k, std::size_t{1} << (k - level),
                         c.level_channels(k)});
    }
    pending.push_back({SourceKind::kBottleneck, n_levels, c.level_height(level) / grid,
                       c.bottleneck_channels});
    if (width < pending.size()) {
      throw ConfigError("decoder level " + std::to_string(level) + " has " +
                        std::to_string(width) + " channels for " +
                        std::to_string(pending.size()) + " sources; raise base_channels");
    }
    for (std::size_t j = 0; j < pending.size(); ++j) {
      const std::size_t share = width / pending.size() + (j < width % pending.size() ? 1 : 0);
      dl.sources.push_back(DecoderSource<T>{pending[j].kind, pending[j].level, pending[j].factor,
                                            init.conv(pending[j].channels, share, 3)});
    }
    dl.fuse = init.block(width, width);
  }
  head_ = init.conv(c.level_channels(1), c.num_classes, 1, false);

  for (auto& nt : state()) {
    if (nt.kind != ParamKind::kBuffer) nt.tensor.set_requires_grad(true);
  }
}

// ---- forward pieces -------------------------------------------------------

template <typename T>
Tensor<T> TransClawUNet<T>::conv_unit(const Tensor<T>& x, ConvUnit<T>& unit, bool training) {
  return relu(batch_norm2d(conv2d(x, unit.conv), unit.norm, training));
}

template <typename T>
Tensor<T> TransClawUNet<T>::conv_block(const Tensor<T>& x, ConvBlock<T>& block, bool training) {
  return conv_unit(conv_unit(x, block.first, training), block.second, training);
}

template <typename T>
EncoderFeatures<T> TransClawUNet<T>::encode(const Tensor<T>& x, bool training) {
  EncoderFeatures<T> out;
  Tensor<T> h = x;
  for (auto& block : encoder_) {
    h = conv_block(h, block, training);
    out.skips.push_back(h);
    h = maxpool2d(h);
  }
  out.deepest = h;
  return out;
}

template <typename T>
Tensor<T> TransClawUNet<T>::patch_embed(const Tensor<T>& f) const {
  if (f.rank() != 4) throw DimensionError("patch_embed: expected [B, C, H, W]");
  const std::size_t b = f.dim(0), ch = f.dim(1), h = f.dim(2), w = f.dim(3);
  const std::size_t p = config_.patch_size;
  if (h % p || w % p) {
    throw ConfigError("patch_embed: feature map " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p, n = gh * gw;
  auto patches = reshape(f, {b, ch, gh, p, gw, p});
  patches = permute(patches, {0, 2, 4, 1, 3, 5});  // [B, gh, gw, C, p, p]
  patches = reshape(patches, {b, n, ch * p * p});
  auto tokens = linear(patches, embed_);
  if (!position_.defined()) return tokens;
  if (position_.dim(0) != n) {
    throw ConfigError("patch_embed: position table has " + std::to_string(position_.dim(0)) +
                      " rows for " + std::to_string(n) + " tokens");
  }
  const auto row = reshape(position_, {1, n, config_.model_width});
  return add(tokens, b == 1 ? row : concat(std::vector<Tensor<T>>(b, row), 0));
}

template <typename T>
Tensor<T> TransClawUNet<T>::transformer_block(const Tensor<T>& z, std::size_t layer,
                                              Tensor<T>* attention) const {
  const auto& p = layers_.at(layer);
  const auto attended =
      add(multi_head_attention(layer_norm(z, p.norm1), p.attention, config_.heads, attention), z);
  const auto hidden = gelu(linear(layer_norm(attended, p.norm2), p.fc1));
  return add(linear(hidden, p.fc2), attended);
}

template <typename T>
Tensor<T> TransClawUNet<T>::transform_bottleneck(const Tensor<T>& deepest, bool training,
                                                 ForwardTrace<T>* trace) {
  auto z = patch_embed(deepest);
  if (trace) trace->embedded = z;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Tensor<T> attn;
    z = transformer_block(z, l, trace ? &attn : nullptr);
    if (trace) {
      trace->block_outputs.push_back(z);
      trace->attention.push_back(attn);
    }
  }
  z = layer_norm(z, final_norm_);
  const std::size_t b = z.dim(0);
  auto grid = reshape(permute(z, {0, 2, 1}),
                      {b, config_.model_width, config_.grid_height(), config_.grid_width()});
  return conv_unit(grid, bottleneck_, training);
}

template <typename T>
std::vector<Tensor<T>> TransClawUNet<T>::up_path(const Tensor<T>& bottleneck, bool training) {
  std::vector<Tensor<T>> out(config_.conv_levels);
  Tensor<T> h = bottleneck;
  for (std::size_t level = config_.conv_levels; level >= 1 && config_.connections_enabled(level);
       --level) {
    h = conv_unit(h, up_[level - 1], training);
    const std::size_t factor = config_.level_height(level) / h.dim(2);
    h = upsample(h, factor, config_.upsample_mode);
    out[level - 1] = h;
  }
  return out;
}

template <typename T>
Tensor<T> TransClawUNet<T>::claw_decode_level(std::size_t level, const EncoderFeatures<T>& encoder,
                                              const std::vector<Tensor<T>>& up,
                                              const std::vector<Tensor<T>>& decoded,
                                              const Tensor<T>& bottleneck, bool training) {
  const std::size_t n_levels = config_.conv_levels + 1;
  if (level == 0 || level > n_levels) {
    throw InvalidArgument("claw_decode_level: level " + std::to_string(level) +
                          " outside 1.." + std::to_string(n_levels));
  }
  if (level == n_levels) return bottleneck;
  auto& dl = decoder_[level - 1];
  std::vector<Tensor<T>> parts;
  for (auto& src : dl.sources) {
    Tensor<T> feature;
    switch (src.kind) {
      case SourceKind::kEncoder:
        feature = avg_pool2d(encoder.skips.at(src.level - 1), src.factor);
        break;
      case SourceKind::kUpPath:
        feature = up.at(src.level - 1);
        break;
      case SourceKind::kDecoder:
        feature = upsample(decoded.at(src.level), src.factor, config_.upsample_mode);
        break;
      case SourceKind::kBottleneck:
        feature = upsample(bottleneck, src.factor, config_.upsample_mode);
        break;
    }
    parts.push_back(conv2d(feature, src.conv));
  }
  return conv_block(concat(parts, 1), dl.fuse, training);
}

template <typename T>
Tensor<T> TransClawUNet<T>::forward(const Tensor<T>& x, bool training, ForwardTrace<T>* trace) {
  const auto& c = config_;
  if (x.rank() != 4 || x.dim(1) != c.in_channels || x.dim(2) != c.height || x.dim(3) != c.width) {
    throw ConfigError("forward: input " + shape_str(x.shape()) + " does not match config (B, " +
                      std::to_string(c.in_channels) + ", " + std::to_string(c.height) + ", " +
                      std::to_string(c.width) + ")");
  }
  auto encoder = encode(x, training);
  auto bottleneck = transform_bottleneck(encoder.deepest, training, trace);
  auto up = up_path(bottleneck, training);
  const std::size_t n_levels = c.conv_levels + 1;
  std::vector<Tensor<T>> decoded(n_levels + 1);
  decoded[n_levels] = claw_decode_level(n_levels, encoder, up, decoded, bottleneck, training);
  for (std::size_t level = c.conv_levels; level >= 1; --level) {
    decoded[level] = claw_decode_level(level, encoder, up, decoded, decoded[n_levels], training);
  }
  auto logits = conv2d(decoded[1], head_);
  if (trace) {
    trace->encoder = encoder;
    trace->bottleneck = bottleneck;
    trace->up = up;
    trace->decoder.assign(decoded.begin() + 1, decoded.end());
  }
  return logits;
}

// ---- parameter registry ---------------------------------------------------

namespace {

template <typename T>
void push_conv(std::vector<NamedTensor<T>>& out, const std::string& prefix, Conv2dParams<T>& c) {
  out.push_back({prefix + ".weight", c.weight, ParamKind::kWeight});
  out.push_back({prefix + ".bias", c.bias, ParamKind::kBias});
}

template <typename T>
void push_norm(std::vector<NamedTensor<T>>& out, const std::string& prefix, NormParams<T>& n) {
  out.push_back({prefix + ".gamma", n.gamma, ParamKind::kNorm});
  out.push_back({prefix + ".beta", n.beta, ParamKind::kNorm});
  if (n.running_mean.defined()) {
    out.push_back({prefix + ".running_mean", n.running_mean, ParamKind::kBuffer});
    out.push_back({prefix + ".running_var", n.running_var, ParamKind::kBuffer});
  }
}

template <typename T>
void push_linear(std::vector<NamedTensor<T>>& out, const std::string& prefix, LinearParams<T>& l) {
  out.push_back({prefix + ".weight", l.weight, ParamKind::kWeight});
  out.push_back({prefix + ".bias", l.bias, ParamKind::kBias});
}

template <typename T>
void push_unit(std::vector<NamedTensor<T>>& out, const std::string& prefix, ConvUnit<T>& u) {
  push_conv(out, prefix + ".conv", u.conv);
  push_norm(out, prefix + ".bn", u.norm);
}

template <typename T>
void push_block(std::vector<NamedTensor<T>>& out, const std::string& prefix, ConvBlock<T>& b) {
  push_unit(out, prefix + ".unit0", b.first);
  push_unit(out, prefix + ".unit1", b.second);
}

std::string source_name(SourceKind kind, std::size_t level) {
  switch (kind) {
    case SourceKind::kEncoder: return "enc" + std::to_string(level);
    case SourceKind::kUpPath: return "up";
    case SourceKind::kDecoder: return "dec" + std::to_string(level);
    case SourceKind::kBottleneck: return "bottleneck";
  }
  return "unknown";
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> TransClawUNet<T>::state() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    push_block(out, "encoder." + std::to_string(i + 1), encoder_[i]);
  }
  push_linear(out, "embed.proj", embed_);
  if (position_.defined()) out.push_back({"embed.position", position_, ParamKind::kPosition});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "transformer." + std::to_string(l);
    auto& layer = layers_[l];
    push_norm(out, prefix + ".norm1", layer.norm1);
    push_linear(out, prefix + ".attn.query", layer.attention.query);
    push_linear(out, prefix + ".attn.key", layer.attention.key);
    push_linear(out, prefix + ".attn.value", layer.attention.value);
    push_linear(out, prefix + ".attn.output", layer.attention.output);
    push_norm(out, prefix + ".norm2", layer.norm2);
    push_linear(out, prefix + ".mlp.fc1", layer.fc1);
    push_linear(out, prefix + ".mlp.fc2", layer.fc2);
  }
  push_norm(out, "transformer.norm", final_norm_);
  push_unit(out, "bottleneck", bottleneck_);
  for (std::size_t level = up_.size(); level >= 1 && config_.connections_enabled(level); --level) {
    push_unit(out, "up." + std::to_string(level), up_[level - 1]);
  }
  for (std::size_t level = decoder_.size(); level >= 1; --level) {
    const std::string prefix = "decoder." + std::to_string(level);
    auto& dl = decoder_[level - 1];
    for (auto& src : dl.sources) {
      push_conv(out, prefix + ".source." + source_name(src.kind, src.level), src.conv);
    }
    push_block(out, prefix + ".fuse", dl.fuse);
  }
  push_conv(out, "head", head_);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> TransClawUNet<T>::parameters() {
  auto all = state();
  std::erase_if(all, [](const NamedTensor<T>& nt) { return nt.kind == ParamKind::kBuffer; });
  return all;
}

template <typename T>
std::size_t TransClawUNet<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template Tensor<float> multi_head_attention(const Tensor<float>&, const AttentionParams<float>&,
                                            std::size_t, Tensor<float>*);
template Tensor<double> multi_head_attention(const Tensor<double>&, const AttentionParams<double>&,
                                             std::size_t, Tensor<double>*);
template class TransClawUNet<float>;
template class TransClawUNet<double>;

}  // namespace transclaw
