#include "transclaw/harness.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "transclaw/errors.hpp"
#include "transclaw/serialize.hpp"

namespace transclaw {

namespace {

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

Manifest open_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("dataset directory not found: " + dir.string());
  }
  return read_manifest(dir);
}

void check_against_manifest(const ModelConfig& c, const Manifest& m) {
  if (c.height != m.height || c.width != m.width || c.in_channels != m.channels ||
      c.num_classes != m.classes) {
    std::ostringstream os;
    os << "model expects " << c.in_channels << "x" << c.height << "x" << c.width << " images with "
       << c.num_classes << " classes, dataset " << m.root.string() << " holds " << m.channels
       << "x" << m.height << "x" << m.width << " with " << m.classes << " classes";
    throw ConfigError(os.str());
  }
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

template <typename T>
TrainResult train_typed(const TrainCommand& cmd, const ModelConfig& config,
                        const std::vector<Sample>& train, const std::vector<Sample>& val) {
  TransClawUNet<T> model(config, cmd.seed);
  Sgd<T> optimizer(model.parameters(), cmd.train.sgd);
  TrainOptions options = cmd.train;
  options.seed = cmd.seed;
  std::vector<HistoryRow> history;
  TrainCallbacks<T> callbacks;
  callbacks.on_epoch = [&](const HistoryRow& row) {
    history.push_back(row);
    write_text(cmd.out_dir / "history.csv", history_csv(history));
    emit(cmd.log, "epoch " + std::to_string(row.epoch) + " loss " + fixed(row.loss, 6) +
                      " val_dice " + format_metric(row.val_dice) + " val_hd " +
                      format_metric(row.val_hd));
  };
  callbacks.on_best = [&](const HistoryRow& row, TransClawUNet<T>& m, const Sgd<T>& opt) {
    const auto state = optimizer_state(opt, row.epoch, cmd.seed);
    save_checkpoint(cmd.out_dir / "best.ckpt", m, &state);
  };
  auto result = train_loop(model, optimizer, train, val, options, callbacks);
  const std::uint64_t last_epoch = result.history.empty() ? 0 : result.history.back().epoch;
  const auto state = optimizer_state(optimizer, last_epoch, cmd.seed);
  save_checkpoint(cmd.out_dir / "last.ckpt", model, &state);
  write_text(cmd.out_dir / "history.csv", history_csv(result.history));
  return result;
}

template <typename T>
EvalReport eval_typed(const EvalCommand& cmd, const std::vector<Sample>& samples,
                      const ModelConfig& config) {
  auto loaded = load_checkpoint<T>(cmd.checkpoint, &config);
  return evaluate(loaded.model, samples, cmd.batch_size);
}

template <typename T>
std::vector<std::vector<std::uint8_t>> predict_typed(const PredictCommand& cmd,
                                                     const std::vector<Sample>& samples) {
  auto loaded = load_checkpoint<T>(cmd.checkpoint);
  return predict_masks(loaded.model, samples, 1);
}

}  // namespace

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::kF32;
  if (text == "f64") return Precision::kF64;
  throw InvalidArgument("precision must be f32 or f64, got \"" + text + "\"");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const FormatError*>(&e) || dynamic_cast<const InvalidArgument*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return 2;
  }
  return 1;
}

std::pair<std::size_t, std::size_t> parse_resolution(const std::string& text) {
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 6) {
      throw InvalidArgument("resolution must look like 64 or 64x48, got \"" + text + "\"");
    }
    return static_cast<std::size_t>(std::stoul(s));
  };
  const auto x = text.find('x');
  if (x == std::string::npos) {
    const auto n = number(text);
    return {n, n};
  }
  return {number(text.substr(0, x)), number(text.substr(x + 1))};
}

ModelConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_json(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void apply_overrides(ModelConfig& config, const ConfigOverrides& o) {
  if (o.skips) config.skips = *o.skips;
  if (o.patch) config.patch_size = *o.patch;
  if (o.height) config.height = *o.height;
  if (o.width) config.width = *o.width;
}

TrainSummary run_train(const TrainCommand& cmd) {
  const auto manifest = open_dataset(cmd.data_dir);
  ModelConfig config;
  if (cmd.config_path) {
    config = load_config_file(*cmd.config_path);
  } else {
    config.height = manifest.height;
    config.width = manifest.width;
    config.in_channels = manifest.channels;
    config.num_classes = manifest.classes;
  }
  apply_overrides(config, cmd.overrides);
  config.validate();
  check_against_manifest(config, manifest);
  cmd.train.validate();

  const auto train = load_split(manifest, Split::kTrain);
  const auto val = load_split(manifest, Split::kVal);
  if (train.empty()) throw InvalidArgument("dataset " + cmd.data_dir.string() + " has no training samples");
  make_dirs(cmd.out_dir);
  write_text(cmd.out_dir / "config.json", config_to_json(config) + "\n");
  emit(cmd.log, "training on " + std::to_string(train.size()) + " samples, validating on " +
                    std::to_string(val.size()));

  TrainSummary summary;
  summary.config = config;
  summary.result = cmd.precision == Precision::kF64 ? train_typed<double>(cmd, config, train, val)
                                                    : train_typed<float>(cmd, config, train, val);
  return summary;
}

EvalReport run_eval(const EvalCommand& cmd) {
  if (!std::filesystem::exists(cmd.checkpoint)) {
    throw IoError("checkpoint not found: " + cmd.checkpoint.string());
  }
  const auto manifest = open_dataset(cmd.data_dir);
  const auto config = read_checkpoint_config(cmd.checkpoint);
  check_against_manifest(config, manifest);
  const auto samples = load_split(manifest, cmd.split);
  if (samples.empty()) {
    throw InvalidArgument(std::string("split ") + split_name(cmd.split) + " of " +
                          cmd.data_dir.string() + " is empty");
  }
  const auto report = cmd.precision == Precision::kF64 ? eval_typed<double>(cmd, samples, config)
                                                       : eval_typed<float>(cmd, samples, config);
  make_dirs(cmd.out_dir);
  write_text(cmd.out_dir / "report.csv", report.to_csv());
  write_text(cmd.out_dir / "report.txt", report.to_text());
  return report;
}

std::vector<std::filesystem::path> run_predict(const PredictCommand& cmd) {
  if (!std::filesystem::exists(cmd.checkpoint)) {
    throw IoError("checkpoint not found: " + cmd.checkpoint.string());
  }
  if (cmd.inputs.empty()) throw InvalidArgument("predict: no input images");
  const auto config = read_checkpoint_config(cmd.checkpoint);
  std::vector<Sample> samples;
  for (const auto& path : cmd.inputs) {
    auto image = load_tensor<float>(path);
    if (image.rank() != 3 || image.dim(0) != config.in_channels || image.dim(1) != config.height ||
        image.dim(2) != config.width) {
      throw ConfigError(path.string() + ": image " + shape_str(image.shape()) +
                        " does not match the checkpoint input (" +
                        std::to_string(config.in_channels) + ", " + std::to_string(config.height) +
                        ", " + std::to_string(config.width) + ")");
    }
    Sample s;
    s.image = std::move(image);
    s.height = config.height;
    s.width = config.width;
    s.mask.assign(config.height * config.width, 0);
    samples.push_back(std::move(s));
  }
  const auto masks = cmd.precision == Precision::kF64 ? predict_typed<double>(cmd, samples)
                                                      : predict_typed<float>(cmd, samples);
  make_dirs(cmd.out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto stem = cmd.inputs[i].stem().string();
    const auto path = cmd.out_dir / (stem + ".mask");
    save_mask(path, masks[i], config.height, config.width);
    if (cmd.color) save_color_mask(cmd.out_dir / (stem + ".ppm"), masks[i], config.height, config.width);
    written.push_back(path);
  }
  return written;
}

AblationAxis parse_axis(const std::string& text) {
  if (text == "skips") return AblationAxis::kSkips;
  if (text == "patch") return AblationAxis::kPatch;
  if (text == "resolution") return AblationAxis::kResolution;
  throw InvalidArgument("ablation axis must be skips, patch or resolution, got \"" + text + "\"");
}

const char* axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kSkips:
      return "skips";
    case AblationAxis::kPatch:
      return "patch";
    case AblationAxis::kResolution:
      return "resolution";
  }
  return "?";
}

std::string ablation_csv(AblationAxis axis, const std::vector<AblationRow>& rows,
                         std::size_t classes) {
  std::ostringstream out;
  out << "axis,value,seed,mean_dice,mean_ahd";
  for (std::size_t k = 1; k < classes; ++k) out << ",class_" << k << "_dice";
  out << '\n';
  for (const auto& r : rows) {
    out << axis_name(axis) << ',' << r.value << ',' << r.seed << ','
        << format_metric(r.report.mean_dice) << ',' << format_metric(r.report.mean_ahd);
    for (const auto& c : r.report.rows) out << ',' << format_metric(c.dice);
    out << '\n';
  }
  return out.str();
}

std::vector<AblationRow> run_ablate(const AblateCommand& cmd) {
  if (cmd.values.empty()) throw InvalidArgument("ablate: no values given");
  if (cmd.seeds.empty()) throw InvalidArgument("ablate: no seeds given");
  cmd.train.validate();
  ModelConfig base = cmd.config_path ? load_config_file(*cmd.config_path) : ModelConfig{};
  apply_overrides(base, cmd.overrides);

  std::optional<Manifest> manifest;
  if (cmd.data_dir && cmd.axis != AblationAxis::kResolution) {
    manifest = open_dataset(*cmd.data_dir);
    base.height = manifest->height;
    base.width = manifest->width;
    base.in_channels = manifest->channels;
    base.num_classes = manifest->classes;
  }
  PhantomOptions phantoms = cmd.phantoms;
  if (!manifest) {
    // a config file decides the class and channel counts of generated phantoms
    if (cmd.config_path) {
      phantoms.classes = base.num_classes;
      phantoms.channels = base.in_channels;
    } else {
      base.num_classes = phantoms.classes;
      base.in_channels = phantoms.channels;
    }
  }

  std::vector<ModelConfig> configs;
  for (const auto& value : cmd.values) {
    ModelConfig c = base;
    try {
      switch (cmd.axis) {
        case AblationAxis::kSkips:
        case AblationAxis::kPatch: {
          if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
            throw InvalidArgument("not a non-negative integer");
          }
          const auto n = static_cast<std::size_t>(std::stoul(value));
          (cmd.axis == AblationAxis::kSkips ? c.skips : c.patch_size) = n;
          break;
        }
        case AblationAxis::kResolution: {
          const auto [h, w] = parse_resolution(value);
          c.height = h;
          c.width = w;
          break;
        }
      }
      c.validate();
      TransClawUNet<float> probe(c, 0);
    } catch (const Error& e) {
      throw ConfigError(std::string("ablation value ") + axis_name(cmd.axis) + "=" + value +
                        " rejected: " + e.what());
    }
    configs.push_back(c);
  }

  std::vector<Sample> train, val;
  if (manifest) {
    train = load_split(*manifest, Split::kTrain);
    val = load_split(*manifest, Split::kVal);
    if (val.empty()) val = load_split(*manifest, Split::kTest);
    if (val.empty()) throw InvalidArgument("ablate: dataset has neither val nor test samples");
  }

  make_dirs(cmd.out_dir);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    if (!manifest) {
      PhantomOptions po = phantoms;
      po.height = c.height;
      po.width = c.width;
      auto all = generate_samples(po);
      const auto n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(static_cast<double>(all.size()) * po.val_fraction + 0.5));
      if (n_val >= all.size()) throw InvalidArgument("ablate: too few samples for a validation split");
      train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
      val.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
    }
    for (auto seed : cmd.seeds) {
      TransClawUNet<float> model(c, seed);
      Sgd<float> optimizer(model.parameters(), cmd.train.sgd);
      TrainOptions options = cmd.train;
      options.seed = seed;
      train_loop(model, optimizer, train, {}, options);
      AblationRow row{cmd.values[i], seed, evaluate(model, val, options.eval_batch_size)};
      emit(cmd.log, std::string(axis_name(cmd.axis)) + "=" + row.value + " seed " +
                        std::to_string(seed) + " mean_dice " + format_metric(row.report.mean_dice));
      rows.push_back(std::move(row));
      write_text(cmd.out_dir / "ablation.csv", ablation_csv(cmd.axis, rows, base.num_classes));
    }
  }
  return rows;
}

}  // namespace transclaw
