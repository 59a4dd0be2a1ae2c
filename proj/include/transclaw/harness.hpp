#pragma once

// Command implementations shared by the C API and the command-line tool.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "transclaw/data.hpp"
#include "transclaw/gradsuite.hpp"
#include "transclaw/metrics.hpp"
#include "transclaw/model.hpp"
#include "transclaw/train.hpp"

namespace transclaw {

using LogFn = std::function<void(const std::string&)>;

enum class Precision { kF32, kF64 };
Precision parse_precision(const std::string& text);

// 0 success, 1 internal error, 2 usage or input error.
int exit_code_for(const std::exception& e);

struct ConfigOverrides {
  std::optional<std::size_t> skips;
  std::optional<std::size_t> patch;
  std::optional<std::size_t> height;
  std::optional<std::size_t> width;
};

// "64" or "64x48".
std::pair<std::size_t, std::size_t> parse_resolution(const std::string& text);

ModelConfig load_config_file(const std::filesystem::path& path);
void apply_overrides(ModelConfig& config, const ConfigOverrides& overrides);

struct TrainCommand {
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  TrainOptions train;
  ConfigOverrides overrides;
  Precision precision = Precision::kF32;
  LogFn log;
};

struct TrainSummary {
  ModelConfig config;
  TrainResult result;
};

// Writes history.csv, best.ckpt, last.ckpt and config.json under out_dir.
TrainSummary run_train(const TrainCommand& cmd);

struct EvalCommand {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  Split split = Split::kTest;
  std::filesystem::path out_dir;
  std::size_t batch_size = 8;
  Precision precision = Precision::kF32;
};

// Writes report.csv and report.txt under out_dir.
EvalReport run_eval(const EvalCommand& cmd);

struct PredictCommand {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> inputs;  // image tensors or sample files
  std::filesystem::path out_dir;
  bool color = false;
  Precision precision = Precision::kF32;
};

// One <stem>.mask per input (plus <stem>.ppm with `color`). Returns the
// written mask paths.
std::vector<std::filesystem::path> run_predict(const PredictCommand& cmd);

enum class AblationAxis { kSkips, kPatch, kResolution };
AblationAxis parse_axis(const std::string& text);
const char* axis_name(AblationAxis axis);

struct AblateCommand {
  AblationAxis axis = AblationAxis::kSkips;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::optional<std::filesystem::path> config_path;
  ConfigOverrides overrides;
  // Existing dataset for the skips and patch axes; phantoms are generated
  // in memory when absent (always, for the resolution axis).
  std::optional<std::filesystem::path> data_dir;
  PhantomOptions phantoms;
  TrainOptions train;
  std::filesystem::path out_dir;
  LogFn log;
};

struct AblationRow {
  std::string value;
  std::uint64_t seed = 0;
  EvalReport report;
};

// Validates every value up front, then trains and evaluates each
// (value, seed) cell in order. Writes ablation.csv under out_dir.
std::vector<AblationRow> run_ablate(const AblateCommand& cmd);
std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows,
                         std::size_t classes);

}  // namespace transclaw
