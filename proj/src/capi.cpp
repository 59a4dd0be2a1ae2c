#include "transclaw/transclaw.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>

#include "transclaw/errors.hpp"
#include "transclaw/harness.hpp"

struct tc_model {
  transclaw::TransClawUNet<float> net;
};

namespace {

using namespace transclaw;

thread_local std::string g_last_error;

tc_status fail(tc_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

tc_status status_for(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return TC_ERR_DIMENSION;
  if (dynamic_cast<const ConfigError*>(&e)) return TC_ERR_CONFIG;
  if (dynamic_cast<const FormatError*>(&e)) return TC_ERR_FORMAT;
  if (dynamic_cast<const IoError*>(&e)) return TC_ERR_IO;
  if (dynamic_cast<const NumericError*>(&e)) return TC_ERR_NUMERIC;
  if (dynamic_cast<const GraphError*>(&e)) return TC_ERR_GRAPH;
  if (dynamic_cast<const InvalidArgument*>(&e)) return TC_ERR_INVALID_ARGUMENT;
  return TC_ERR_INTERNAL;
}

template <typename F>
tc_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return TC_OK;
  } catch (const std::bad_alloc&) {
    return fail(TC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(status_for(e), e.what());
  } catch (...) {
    return fail(TC_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* message) {
  if (!ok) throw InvalidArgument(message);
}

Precision precision_of(tc_precision p) {
  if (p == TC_F32) return Precision::kF32;
  if (p == TC_F64) return Precision::kF64;
  throw InvalidArgument("precision must be TC_F32 or TC_F64");
}

LogFn logger(tc_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

std::vector<std::string> split_list(const char* text) {
  std::vector<std::string> out;
  if (!text) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

ConfigOverrides overrides_of(int skips, int patch, size_t height, size_t width) {
  ConfigOverrides o;
  if (skips >= 0) o.skips = static_cast<std::size_t>(skips);
  if (patch > 0) o.patch = static_cast<std::size_t>(patch);
  if (height > 0) o.height = height;
  if (width > 0) o.width = width;
  if (height > 0 && width == 0) o.width = height;
  return o;
}

Tensor<float> input_tensor(const tc_model* m, const float* input, size_t batch) {
  require(input != nullptr, "input is NULL");
  require(batch > 0, "batch must be positive");
  const auto& c = m->net.config();
  const Shape shape{batch, c.in_channels, c.height, c.width};
  return Tensor<float>(shape, std::vector<float>(input, input + shape_numel(shape)));
}

}  // namespace

extern "C" {

const char* tc_version(void) { return "1.0.0"; }

const char* tc_last_error(void) { return g_last_error.c_str(); }

const char* tc_status_name(tc_status status) {
  switch (status) {
    case TC_OK:
      return "ok";
    case TC_ERR_DIMENSION:
      return "dimension error";
    case TC_ERR_CONFIG:
      return "config error";
    case TC_ERR_FORMAT:
      return "format error";
    case TC_ERR_IO:
      return "io error";
    case TC_ERR_NUMERIC:
      return "numeric error";
    case TC_ERR_GRAPH:
      return "graph error";
    case TC_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case TC_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

int tc_exit_code(tc_status status) {
  switch (status) {
    case TC_OK:
      return 0;
    case TC_ERR_DIMENSION:
    case TC_ERR_CONFIG:
    case TC_ERR_FORMAT:
    case TC_ERR_IO:
    case TC_ERR_INVALID_ARGUMENT:
      return 2;
    default:
      return 1;
  }
}

tc_status tc_model_create(const char* config_json, uint64_t seed, tc_model** out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    *out = nullptr;
    const ModelConfig config = config_json ? config_from_json(config_json) : ModelConfig{};
    *out = new tc_model{TransClawUNet<float>(config, seed)};
  });
}

tc_status tc_model_load(const char* path, tc_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out must not be NULL");
    *out = nullptr;
    auto loaded = load_checkpoint<float>(path);
    *out = new tc_model{std::move(loaded.model)};
  });
}

tc_status tc_model_save(tc_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "model and path must not be NULL");
    save_checkpoint(path, model->net);
  });
}

void tc_model_free(tc_model* model) { delete model; }

tc_status tc_model_config_json(const tc_model* model, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    require(model != nullptr, "model is NULL");
    const auto text = config_to_json(model->net.config());
    if (needed) *needed = text.size() + 1;
    if (buf && capacity > 0) {
      const size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
      if (capacity < text.size() + 1) {
        throw InvalidArgument("buffer too small for the config document");
      }
    }
  });
}

tc_status tc_model_parameter_count(tc_model* model, size_t* out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "model and out must not be NULL");
    *out = model->net.parameter_count();
  });
}

tc_status tc_model_shape(const tc_model* model, size_t* channels, size_t* height, size_t* width,
                         size_t* classes) {
  return guarded([&] {
    require(model != nullptr, "model is NULL");
    const auto& c = model->net.config();
    if (channels) *channels = c.in_channels;
    if (height) *height = c.height;
    if (width) *width = c.width;
    if (classes) *classes = c.num_classes;
  });
}

tc_status tc_model_forward(tc_model* model, const float* input, size_t batch, float* logits,
                           size_t logits_len) {
  return guarded([&] {
    require(model != nullptr && logits != nullptr, "model and logits must not be NULL");
    const auto& c = model->net.config();
    const size_t need = batch * c.num_classes * c.height * c.width;
    if (logits_len != need) {
      throw DimensionError("logits buffer holds " + std::to_string(logits_len) + " floats, need " +
                           std::to_string(need));
    }
    NoGradGuard guard;
    const auto out = model->net.forward(input_tensor(model, input, batch), false);
    std::copy(out.values().begin(), out.values().end(), logits);
  });
}

tc_status tc_model_predict(tc_model* model, const float* input, size_t batch, uint8_t* labels,
                           size_t labels_len) {
  return guarded([&] {
    require(model != nullptr && labels != nullptr, "model and labels must not be NULL");
    const auto& c = model->net.config();
    const size_t need = batch * c.height * c.width;
    if (labels_len != need) {
      throw DimensionError("label buffer holds " + std::to_string(labels_len) + " bytes, need " +
                           std::to_string(need));
    }
    NoGradGuard guard;
    const auto out = argmax_classes(model->net.forward(input_tensor(model, input, batch), false));
    std::copy(out.begin(), out.end(), labels);
  });
}

void tc_generate_options_default(tc_generate_options* o) {
  if (!o) return;
  const PhantomOptions d;
  *o = tc_generate_options{nullptr,     d.count, d.classes,      d.height,       d.width,
                           d.channels,  d.seed,  d.noise_level, d.val_fraction, d.test_fraction};
}

tc_status tc_generate_phantoms(const tc_generate_options* o) {
  return guarded([&] {
    require(o != nullptr && o->out_dir != nullptr, "options and out_dir must not be NULL");
    PhantomOptions p;
    p.count = o->count;
    p.classes = o->classes;
    p.height = o->height;
    p.width = o->width;
    p.channels = o->channels;
    p.seed = o->seed;
    p.noise_level = o->noise_level;
    p.val_fraction = o->val_fraction;
    p.test_fraction = o->test_fraction;
    generate_phantoms(o->out_dir, p);
  });
}

void tc_train_options_default(tc_train_options* o) {
  if (!o) return;
  const TrainOptions d;
  *o = tc_train_options{};
  o->epochs = d.epochs;
  o->batch_size = d.batch_size;
  o->lr = d.sgd.lr;
  o->momentum = d.sgd.momentum;
  o->weight_decay = d.sgd.weight_decay;
  o->skips = -1;
  o->precision = TC_F32;
}

tc_status tc_train(const tc_train_options* o) {
  return guarded([&] {
    require(o != nullptr && o->data_dir != nullptr && o->out_dir != nullptr,
            "options, data_dir and out_dir must not be NULL");
    TrainCommand cmd;
    if (o->config_path) cmd.config_path = o->config_path;
    cmd.data_dir = o->data_dir;
    cmd.out_dir = o->out_dir;
    cmd.seed = o->seed;
    cmd.train.epochs = o->epochs;
    cmd.train.batch_size = o->batch_size;
    cmd.train.max_steps = o->max_steps;
    cmd.train.sgd.lr = o->lr;
    cmd.train.sgd.momentum = o->momentum;
    cmd.train.sgd.weight_decay = o->weight_decay;
    cmd.train.sgd.decay_all = o->decay_all != 0;
    cmd.overrides = overrides_of(o->skips, o->patch, o->height, o->width);
    cmd.precision = precision_of(o->precision);
    cmd.log = logger(o->log, o->log_user);
    run_train(cmd);
  });
}

void tc_eval_options_default(tc_eval_options* o) {
  if (!o) return;
  *o = tc_eval_options{nullptr, nullptr, "test", nullptr, 8, TC_F32};
}

tc_status tc_evaluate(const tc_eval_options* o, double* mean_dice) {
  return guarded([&] {
    require(o != nullptr && o->checkpoint != nullptr && o->data_dir != nullptr &&
                o->out_dir != nullptr,
            "options, checkpoint, data_dir and out_dir must not be NULL");
    EvalCommand cmd;
    cmd.checkpoint = o->checkpoint;
    cmd.data_dir = o->data_dir;
    cmd.split = parse_split(o->split ? o->split : "test");
    cmd.out_dir = o->out_dir;
    cmd.batch_size = o->batch_size;
    cmd.precision = precision_of(o->precision);
    const auto report = run_eval(cmd);
    if (mean_dice) *mean_dice = report.mean_dice.value_or(std::numeric_limits<double>::quiet_NaN());
  });
}

void tc_predict_options_default(tc_predict_options* o) {
  if (!o) return;
  *o = tc_predict_options{nullptr, nullptr, 0, nullptr, 0, TC_F32};
}

tc_status tc_predict_files(const tc_predict_options* o) {
  return guarded([&] {
    require(o != nullptr && o->checkpoint != nullptr && o->out_dir != nullptr,
            "options, checkpoint and out_dir must not be NULL");
    require(o->input_count == 0 || o->inputs != nullptr, "inputs is NULL");
    PredictCommand cmd;
    cmd.checkpoint = o->checkpoint;
    for (size_t i = 0; i < o->input_count; ++i) {
      require(o->inputs[i] != nullptr, "an input path is NULL");
      cmd.inputs.emplace_back(o->inputs[i]);
    }
    cmd.out_dir = o->out_dir;
    cmd.color = o->color != 0;
    cmd.precision = precision_of(o->precision);
    run_predict(cmd);
  });
}

void tc_ablate_options_default(tc_ablate_options* o) {
  if (!o) return;
  const PhantomOptions p;
  const TrainOptions t;
  *o = tc_ablate_options{};
  o->axis = "skips";
  o->values = "0,1,2,3";
  o->seeds = "0,1,2";
  o->samples = p.count;
  o->noise_level = p.noise_level;
  o->epochs = 10;
  o->batch_size = t.batch_size;
  o->lr = t.sgd.lr;
  o->momentum = t.sgd.momentum;
  o->weight_decay = t.sgd.weight_decay;
  o->skips = -1;
}

tc_status tc_ablate(const tc_ablate_options* o) {
  return guarded([&] {
    require(o != nullptr && o->axis != nullptr && o->out_dir != nullptr,
            "options, axis and out_dir must not be NULL");
    AblateCommand cmd;
    cmd.axis = parse_axis(o->axis);
    cmd.values = split_list(o->values);
    cmd.seeds.clear();
    for (const auto& s : split_list(o->seeds)) {
      if (s.find_first_not_of("0123456789") != std::string::npos) {
        throw InvalidArgument("seed \"" + s + "\" is not a non-negative integer");
      }
      cmd.seeds.push_back(std::stoull(s));
    }
    if (o->config_path) cmd.config_path = o->config_path;
    if (o->data_dir) cmd.data_dir = o->data_dir;
    cmd.overrides = overrides_of(o->skips, o->patch, o->height, o->width);
    cmd.phantoms.count = o->samples;
    cmd.phantoms.seed = o->data_seed;
    cmd.phantoms.noise_level = o->noise_level;
    cmd.train.epochs = o->epochs;
    cmd.train.batch_size = o->batch_size;
    cmd.train.sgd.lr = o->lr;
    cmd.train.sgd.momentum = o->momentum;
    cmd.train.sgd.weight_decay = o->weight_decay;
    cmd.out_dir = o->out_dir;
    cmd.log = logger(o->log, o->log_user);
    run_ablate(cmd);
  });
}

void tc_gradcheck_options_default(tc_gradcheck_options* o) {
  if (!o) return;
  const GradSuiteOptions d;
  *o = tc_gradcheck_options{d.seed, d.seeds, d.model_seeds, d.tolerance, nullptr, nullptr, nullptr};
}

tc_status tc_gradcheck(const tc_gradcheck_options* o, int* all_passed) {
  return guarded([&] {
    require(o != nullptr, "options is NULL");
    GradSuiteOptions opts;
    opts.seed = o->seed;
    opts.seeds = o->seeds;
    opts.model_seeds = o->model_seeds;
    opts.tolerance = o->tolerance;
    if (o->corrupt) opts.corrupt = o->corrupt;
    bool ok = true;
    run_gradsuite(opts, [&](const GradSuiteRow& row) {
      ok = ok && row.passed;
      if (o->on_row) o->on_row(row.name.c_str(), row.max_error, row.passed ? 1 : 0, o->user);
    });
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

}  // extern "C"
