#include "transclaw/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "transclaw/errors.hpp"
#include "transclaw/serialize.hpp"

namespace transclaw {

void SgdOptions::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
    throw InvalidArgument("weight decay must be non-negative");
  }
}

void TrainOptions::validate() const {
  sgd.validate();
  if (epochs == 0) throw InvalidArgument("epochs must be positive");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (eval_batch_size == 0) throw InvalidArgument("evaluation batch size must be positive");
}

bool applies_weight_decay(ParamKind kind, const SgdOptions& options) {
  if (kind == ParamKind::kBuffer) return false;
  if (options.decay_all) return true;
  return kind != ParamKind::kNorm && kind != ParamKind::kPosition;
}

template <typename T>
Sgd<T>::Sgd(std::vector<NamedTensor<T>> params, const SgdOptions& options)
    : params_(std::move(params)), options_(options) {
  options_.validate();
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    if (p.kind == ParamKind::kBuffer) {
      throw InvalidArgument("optimizer given buffer " + p.name + " as a parameter");
    }
    velocity_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Sgd<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) {
      throw GraphError("sgd_step: parameter " + p.name + " has no gradient; run backward first");
    }
  }
  const T lr = static_cast<T>(options_.lr), mu = static_cast<T>(options_.momentum);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    const T wd = applies_weight_decay(params_[i].kind, options_)
                     ? static_cast<T>(options_.weight_decay)
                     : T(0);
    auto theta = t.data();
    const auto grad = t.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T g = grad[j] + wd * theta[j];
      v[j] = mu * v[j] + g;
      theta[j] -= lr * v[j];
    }
    t.clear_grad();
  }
  ++steps_;
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out << "epoch,loss,val_dice,val_hd\n";
  char loss[40];
  for (const auto& r : rows) {
    std::snprintf(loss, sizeof loss, "%.17g", r.loss);
    out << r.epoch << ',' << loss << ',' << format_metric(r.val_dice) << ','
        << format_metric(r.val_hd) << '\n';
  }
  return out.str();
}

template <typename T>
TrainResult train_loop(TransClawUNet<T>& model, Sgd<T>& optimizer,
                       const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const TrainOptions& options, const TrainCallbacks<T>& callbacks) {
  options.validate();
  if (train.empty()) throw InvalidArgument("train_loop: the training set is empty");
  if (options.batch_size > train.size()) {
    throw InvalidArgument("train_loop: batch size " + std::to_string(options.batch_size) +
                          " exceeds the " + std::to_string(train.size()) + " training samples");
  }
  TrainResult result;
  std::optional<double> best;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    if (options.max_steps > 0 && result.steps >= options.max_steps) break;
    double loss_sum = 0;
    std::size_t batches = 0;
    for (const auto& idx : batch_order(train.size(), options.batch_size, options.seed, epoch)) {
      if (options.max_steps > 0 && result.steps >= options.max_steps) break;
      auto batch = make_batch<T>(train, idx);
      double loss_value = 0;
      try {
        auto logits = model.forward(batch.images, true);
        auto loss = cross_entropy(logits, std::span<const std::uint8_t>(batch.masks));
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) throw NumericError("loss is not finite");
        backward(loss);
      } catch (const NumericError& e) {
        Tape<T>::current().reset();
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(result.steps + 1) + ": " + e.what() +
                           "; try a smaller learning rate");
      }
      optimizer.step();
      loss_sum += loss_value;
      ++batches;
      ++result.steps;
    }
    if (batches == 0) break;
    HistoryRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(batches);
    if (!val.empty()) {
      const auto report = evaluate(model, val, options.eval_batch_size);
      row.val_dice = report.mean_dice;
      row.val_hd = report.mean_ahd;
    }
    result.history.push_back(row);
    if (callbacks.on_epoch) callbacks.on_epoch(row);
    const double score = val.empty() ? -row.loss : row.val_dice.value_or(0.0);
    if (!best || score > *best) {
      best = score;
      result.best_epoch = epoch;
      if (callbacks.on_best) callbacks.on_best(row, model, optimizer);
    }
  }
  return result;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

void write_name(std::ostream& out, const std::string& name) {
  if (name.size() > 0xffff) throw InvalidArgument("tensor name too long: " + name);
  binary::write_u16(out, static_cast<std::uint16_t>(name.size()));
  binary::write_bytes(out, name);
}

std::string read_name(std::istream& in) {
  const auto n = binary::read_u16(in, "tensor name length");
  return binary::read_bytes(in, n, "tensor name");
}

struct RawCheckpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::optional<OptimizerState> state;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool config_only) {
  auto in = open_input(path);
  RawCheckpoint raw;
  try {
    binary::expect_magic(in, kCheckpointMagic, "checkpoint");
    const auto version = binary::read_u32(in, "checkpoint version");
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kCheckpointVersion) +
                        ")");
    }
    const auto config_len = binary::read_u64(in, "config length");
    if (config_len > (1u << 20)) throw FormatError("config document is implausibly large");
    raw.config = config_from_json(binary::read_bytes(in, config_len, "config document"));
    if (config_only) return raw;
    const auto count = binary::read_u32(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
      auto name = read_name(in);
      raw.tensors.emplace_back(std::move(name), read_tensor<float>(in));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      OptimizerState st;
      binary::expect_magic(in, kOptimizerMagic, "optimizer section");
      st.epoch = binary::read_u64(in, "epoch");
      st.seed = binary::read_u64(in, "seed");
      st.steps = binary::read_u64(in, "step count");
      st.sgd.lr = binary::read_f64(in, "learning rate");
      st.sgd.momentum = binary::read_f64(in, "momentum");
      st.sgd.weight_decay = binary::read_f64(in, "weight decay");
      std::uint8_t flag = 0;
      in.read(reinterpret_cast<char*>(&flag), 1);
      if (in.gcount() != 1) throw FormatError("truncated input while reading decay flag");
      st.sgd.decay_all = flag != 0;
      const auto n = binary::read_u32(in, "velocity count");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto name = read_name(in);
        st.velocities.emplace_back(std::move(name), read_tensor<float>(in));
      }
      if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after the optimizer section");
      }
      raw.state = std::move(st);
    }
  } catch (const FormatError& e) {
    throw FormatError("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return raw;
}

}  // namespace

template <typename T>
OptimizerState optimizer_state(const Sgd<T>& optimizer, std::uint64_t epoch, std::uint64_t seed) {
  OptimizerState st;
  st.epoch = epoch;
  st.seed = seed;
  st.steps = optimizer.steps();
  st.sgd = optimizer.options();
  for (std::size_t i = 0; i < optimizer.params().size(); ++i) {
    const auto& p = optimizer.params()[i];
    const auto& v = optimizer.velocities()[i];
    std::vector<float> values(v.begin(), v.end());
    st.velocities.emplace_back(p.name, Tensor<float>(p.tensor.shape(), std::move(values)));
  }
  return st;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TransClawUNet<T>& model,
                     const OptimizerState* state) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    auto out = open_output(tmp);
    binary::write_bytes(out, kCheckpointMagic);
    binary::write_u32(out, kCheckpointVersion);
    const auto config = config_to_json(model.config());
    binary::write_u64(out, config.size());
    binary::write_bytes(out, config);
    const auto tensors = model.state();
    binary::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      write_name(out, t.name);
      write_tensor(out, t.tensor);
    }
    if (state) {
      binary::write_bytes(out, kOptimizerMagic);
      binary::write_u64(out, state->epoch);
      binary::write_u64(out, state->seed);
      binary::write_u64(out, state->steps);
      binary::write_f64(out, state->sgd.lr);
      binary::write_f64(out, state->sgd.momentum);
      binary::write_f64(out, state->sgd.weight_decay);
      const char flag = state->sgd.decay_all ? 1 : 0;
      out.write(&flag, 1);
      binary::write_u32(out, static_cast<std::uint32_t>(state->velocities.size()));
      for (const auto& [name, t] : state->velocities) {
        write_name(out, name);
        write_tensor(out, t);
      }
    }
    if (!out.flush()) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  return read_raw(path, true).config;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  auto raw = read_raw(path, false);
  if (expected && !(*expected == raw.config)) {
    throw ConfigError("checkpoint " + path.string() + " was written for a different config: " +
                      config_difference(*expected, raw.config));
  }
  TransClawUNet<T> model(raw.config, 0);
  std::map<std::string, const Tensor<float>*> stored;
  for (const auto& [name, t] : raw.tensors) {
    if (!stored.emplace(name, &t).second) {
      throw FormatError("corrupt checkpoint " + path.string() + ": duplicate tensor " + name);
    }
  }
  auto state = model.state();
  if (stored.size() != state.size()) {
    for (const auto& [name, t] : stored) {
      bool known = false;
      for (const auto& s : state) known = known || s.name == name;
      if (!known) {
        throw FormatError("corrupt checkpoint " + path.string() + ": unknown tensor " + name);
      }
    }
  }
  for (auto& s : state) {
    auto it = stored.find(s.name);
    if (it == stored.end()) {
      throw FormatError("corrupt checkpoint " + path.string() + ": missing tensor " + s.name);
    }
    if (it->second->shape() != s.tensor.shape()) {
      throw FormatError("corrupt checkpoint " + path.string() + ": tensor " + s.name + " is " +
                        shape_str(it->second->shape()) + ", expected " +
                        shape_str(s.tensor.shape()));
    }
    auto dst = s.tensor.data();
    const auto src = it->second->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  return LoadedCheckpoint<T>{std::move(model), std::move(raw.state)};
}

#define TRANSCLAW_INSTANTIATE(T)                                                               \
  template class Sgd<T>;                                                                       \
  template TrainResult train_loop(TransClawUNet<T>&, Sgd<T>&, const std::vector<Sample>&,      \
                                  const std::vector<Sample>&, const TrainOptions&,             \
                                  const TrainCallbacks<T>&);                                   \
  template OptimizerState optimizer_state(const Sgd<T>&, std::uint64_t, std::uint64_t);        \
  template void save_checkpoint(const std::filesystem::path&, TransClawUNet<T>&,               \
                                const OptimizerState*);                                        \
  template LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path&, const ModelConfig*);

TRANSCLAW_INSTANTIATE(float)
TRANSCLAW_INSTANTIATE(double)

#undef TRANSCLAW_INSTANTIATE

}  // namespace transclaw
