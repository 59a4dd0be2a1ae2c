#pragma once

// TransClaw U-Net: convolutional encoder, patch-embedded transformer
// bottleneck, bottom-upsampling path, and a claw decoder whose levels fuse
// resampled encoder, up-path, and deeper-decoder features.
//
// Level numbering is 1-based from the shallowest level. With N_c conv levels,
// level i runs at H / 2^(i-1); the bottleneck is level N = N_c + 1 and sits
// on the token grid H / (2^N_c * patch_size).

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "transclaw/nn.hpp"
#include "transclaw/tensor.hpp"

namespace transclaw {

inline constexpr int kConfigVersion = 1;

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::size_t conv_levels = 3;
  std::size_t base_channels = 16;
  // Patch edge measured on the deepest feature map; the patch edge on the
  // input image is patch_size * 2^conv_levels.
  std::size_t patch_size = 1;
  std::size_t transformer_layers = 4;
  std::size_t heads = 4;
  std::size_t model_width = 64;
  std::size_t mlp_width = 128;
  std::size_t bottleneck_channels = 64;
  // Number of decoder levels (deepest first) that receive encoder and
  // up-path connections.
  std::size_t skips = 3;
  UpsampleMode upsample_mode = UpsampleMode::kBilinear;
  bool position_embedding = true;
  bool include_same_level_encoder = false;

  // Throws ConfigError naming the violated rule.
  void validate() const;

  std::size_t effective_patch() const { return patch_size << conv_levels; }
  std::size_t grid_height() const { return height / effective_patch(); }
  std::size_t grid_width() const { return width / effective_patch(); }
  std::size_t token_count() const { return grid_height() * grid_width(); }
  std::size_t level_channels(std::size_t level) const {
    return base_channels << (level - 1);
  }
  std::size_t level_height(std::size_t level) const { return height >> (level - 1); }
  std::size_t level_width(std::size_t level) const { return width >> (level - 1); }
  bool connections_enabled(std::size_t level) const { return level + skips > conv_levels; }

  bool operator==(const ModelConfig&) const = default;
};

// Flat JSON document, keys documented in the README.
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(std::string_view text);
// Human-readable list of differing keys; empty when equal.
std::string config_difference(const ModelConfig& expected, const ModelConfig& actual);

enum class ParamKind { kWeight, kBias, kNorm, kPosition, kBuffer };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> output;
};

// softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated and projected.
// z is [B, n, d_model]. `weights`, when given, receives [B, h, n, n].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& z, const AttentionParams<T>& p,
                               std::size_t heads, Tensor<T>* weights = nullptr);

template <typename T>
struct ConvUnit {
  Conv2dParams<T> conv;
  NormParams<T> norm;
};

template <typename T>
struct ConvBlock {
  ConvUnit<T> first;
  ConvUnit<T> second;
};

template <typename T>
struct TransformerLayer {
  NormParams<T> norm1;
  AttentionParams<T> attention;
  NormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

enum class SourceKind { kEncoder, kUpPath, kDecoder, kBottleneck };

template <typename T>
struct DecoderSource {
  SourceKind kind;
  std::size_t level;   // encoder/decoder level the feature comes from
  std::size_t factor;  // resampling factor to reach the target level
  Conv2dParams<T> conv;
};

template <typename T>
struct DecoderLevel {
  std::vector<DecoderSource<T>> sources;
  ConvBlock<T> fuse;
};

template <typename T>
struct EncoderFeatures {
  std::vector<Tensor<T>> skips;  // pre-pool outputs, index 0 = level 1
  Tensor<T> deepest;             // pooled output of the last level
};

// Intermediates captured by forward() for inspection and tests.
template <typename T>
struct ForwardTrace {
  EncoderFeatures<T> encoder;
  Tensor<T> embedded;                  // patch embedding + position
  std::vector<Tensor<T>> block_outputs;
  std::vector<Tensor<T>> attention;    // per layer, [B, h, n, n]
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> up;           // index 0 = level 1
  std::vector<Tensor<T>> decoder;      // index 0 = level 1, back() = level N
};

template <typename T>
class TransClawUNet {
 public:
  explicit TransClawUNet(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  // x [B, C, H, W] -> logits [B, K, H, W].
  Tensor<T> forward(const Tensor<T>& x, bool training, ForwardTrace<T>* trace = nullptr);

  Tensor<T> conv_unit(const Tensor<T>& x, ConvUnit<T>& unit, bool training);
  Tensor<T> conv_block(const Tensor<T>& x, ConvBlock<T>& block, bool training);
  EncoderFeatures<T> encode(const Tensor<T>& x, bool training);
  // [B, C_f, H_f, W_f] -> [B, n, d_model], row-major token order.
  Tensor<T> patch_embed(const Tensor<T>& features) const;
  Tensor<T> transformer_block(const Tensor<T>& z, std::size_t layer,
                              Tensor<T>* attention = nullptr) const;
  Tensor<T> transform_bottleneck(const Tensor<T>& deepest, bool training,
                                 ForwardTrace<T>* trace = nullptr);
  // Returns X_Up for levels 1..N_c (index 0 = level 1). Only levels with
  // connections enabled are computed; the rest stay undefined.
  std::vector<Tensor<T>> up_path(const Tensor<T>& bottleneck, bool training);
  // `decoded` is indexed by absolute level and must hold the outputs of
  // levels level+1..N_c. Level N returns `bottleneck` unchanged.
  Tensor<T> claw_decode_level(std::size_t level, const EncoderFeatures<T>& encoder,
                              const std::vector<Tensor<T>>& up,
                              const std::vector<Tensor<T>>& decoded,
                              const Tensor<T>& bottleneck, bool training);

  // Every tensor the model owns, in a stable order. Batch-norm running
  // statistics are tagged kBuffer; parameters() omits them.
  std::vector<NamedTensor<T>> state();
  std::vector<NamedTensor<T>> parameters();
  std::size_t parameter_count();

  TransformerLayer<T>& transformer_layer(std::size_t i) { return layers_.at(i); }
  const DecoderLevel<T>& decoder_level(std::size_t level) const { return decoder_.at(level - 1); }
  Tensor<T>& position_embedding() { return position_; }

 private:
  ModelConfig config_;
  std::vector<ConvBlock<T>> encoder_;
  LinearParams<T> embed_;
  Tensor<T> position_;
  std::vector<TransformerLayer<T>> layers_;
  NormParams<T> final_norm_;
  ConvUnit<T> bottleneck_;
  std::vector<ConvUnit<T>> up_;  // index 0 = level 1
  std::vector<DecoderLevel<T>> decoder_;
  Conv2dParams<T> head_;
};

}  // namespace transclaw
