#pragma once

// SGD with momentum and weight decay, the epoch loop, and checkpoints.
//
// Checkpoint file:
//   "TCUN" | u32 version | u64 config length | config JSON | u32 tensor count |
//   per tensor: u16 name length | name | "TCT1" tensor
//   optional "OPT1" section: u64 epoch | u64 seed | u64 steps | f64 lr |
//   f64 momentum | f64 weight decay | u8 decay-exempt flag | u32 count |
//   per velocity: u16 name length | name | "TCT1" tensor

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "transclaw/data.hpp"
#include "transclaw/metrics.hpp"
#include "transclaw/model.hpp"

namespace transclaw {

inline constexpr std::string_view kCheckpointMagic = "TCUN";
inline constexpr std::string_view kOptimizerMagic = "OPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SgdOptions {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Norm affine terms and the position embedding skip weight decay unless set.
  bool decay_all = false;

  void validate() const;
};

bool applies_weight_decay(ParamKind kind, const SgdOptions& options);

// Per parameter: g = grad + wd * theta; v = momentum * v + g; theta -= lr * v.
// Velocities start at zero; gradients are cleared after the update.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NamedTensor<T>> params, const SgdOptions& options);

  // Throws GraphError naming the first parameter without a gradient.
  void step();

  const SgdOptions& options() const { return options_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }
  std::vector<std::vector<T>>& velocities() { return velocity_; }
  const std::vector<std::vector<T>>& velocities() const { return velocity_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }

 private:
  std::vector<NamedTensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  SgdOptions options_;
  std::uint64_t steps_ = 0;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double loss = 0;                  // mean batch loss over the epoch
  std::optional<double> val_dice;   // mean foreground dice
  std::optional<double> val_hd;     // mean average-Hausdorff
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  SgdOptions sgd;
  // Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  std::size_t eval_batch_size = 8;

  void validate() const;
};

template <typename T>
struct TrainCallbacks {
  std::function<void(const HistoryRow&)> on_epoch;
  // Called when the validation dice improves (or, without a validation set,
  // when the epoch loss improves).
  std::function<void(const HistoryRow&, TransClawUNet<T>&, const Sgd<T>&)> on_best;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
};

// One epoch = one pass over a permutation keyed by (seed, epoch). Each batch
// runs a training-mode forward, cross-entropy, backward and an SGD step.
template <typename T>
TrainResult train_loop(TransClawUNet<T>& model, Sgd<T>& optimizer,
                       const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const TrainOptions& options, const TrainCallbacks<T>& callbacks = {});

struct OptimizerState {
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  SgdOptions sgd;
  std::vector<std::pair<std::string, Tensor<float>>> velocities;
};

template <typename T>
OptimizerState optimizer_state(const Sgd<T>& optimizer, std::uint64_t epoch, std::uint64_t seed);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TransClawUNet<T>& model,
                     const OptimizerState* state = nullptr);

template <typename T>
struct LoadedCheckpoint {
  TransClawUNet<T> model;
  std::optional<OptimizerState> state;
};

// Throws FormatError on bad magic, version or truncation, ConfigError when
// `expected` is given and differs from the stored config.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path,
                                    const ModelConfig* expected = nullptr);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace transclaw
