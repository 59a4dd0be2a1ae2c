#ifndef TRANSCLAW_TRANSCLAW_H_
#define TRANSCLAW_TRANSCLAW_H_

/* C interface to the TransClaw U-Net library.
 *
 * Every function returns a tc_status. On failure a description is kept per
 * thread and can be read with tc_last_error() until the next call on that
 * thread. Strings passed in are UTF-8 and borrowed for the duration of the
 * call. Handles are not thread-safe. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TC_API __declspec(dllexport)
#else
#define TC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tc_status {
  TC_OK = 0,
  TC_ERR_DIMENSION = 1,
  TC_ERR_CONFIG = 2,
  TC_ERR_FORMAT = 3,
  TC_ERR_IO = 4,
  TC_ERR_NUMERIC = 5,
  TC_ERR_GRAPH = 6,
  TC_ERR_INVALID_ARGUMENT = 7,
  TC_ERR_INTERNAL = 8
} tc_status;

typedef enum tc_precision { TC_F32 = 0, TC_F64 = 1 } tc_precision;

typedef struct tc_model tc_model;

typedef void (*tc_log_fn)(const char* line, void* user);

TC_API const char* tc_version(void);
TC_API const char* tc_last_error(void);
TC_API const char* tc_status_name(tc_status status);
/* 0 for TC_OK, 2 for input and usage errors, 1 otherwise. */
TC_API int tc_exit_code(tc_status status);

/* ---- models (32-bit) ---------------------------------------------------- */

/* config_json may be NULL for the default configuration. */
TC_API tc_status tc_model_create(const char* config_json, uint64_t seed, tc_model** out);
TC_API tc_status tc_model_load(const char* path, tc_model** out);
TC_API tc_status tc_model_save(tc_model* model, const char* path);
TC_API void tc_model_free(tc_model* model);

/* Copies the config document into buf (NUL-terminated) when capacity allows;
 * *needed receives the size including the terminator. */
TC_API tc_status tc_model_config_json(const tc_model* model, char* buf, size_t capacity,
                                      size_t* needed);
TC_API tc_status tc_model_parameter_count(tc_model* model, size_t* out);
/* Input extents as configured: channels, height, width, classes. */
TC_API tc_status tc_model_shape(const tc_model* model, size_t* channels, size_t* height,
                                size_t* width, size_t* classes);

/* Inference-mode forward. input holds batch*C*H*W floats, logits receives
 * batch*K*H*W. */
TC_API tc_status tc_model_forward(tc_model* model, const float* input, size_t batch,
                                  float* logits, size_t logits_len);
/* Per-pixel argmax labels, batch*H*W bytes. */
TC_API tc_status tc_model_predict(tc_model* model, const float* input, size_t batch,
                                  uint8_t* labels, size_t labels_len);

/* ---- commands ----------------------------------------------------------- */

typedef struct tc_generate_options {
  const char* out_dir;
  size_t count;
  size_t classes;
  size_t height;
  size_t width;
  size_t channels;
  uint64_t seed;
  double noise_level;
  double val_fraction;
  double test_fraction;
} tc_generate_options;

TC_API void tc_generate_options_default(tc_generate_options* options);
TC_API tc_status tc_generate_phantoms(const tc_generate_options* options);

typedef struct tc_train_options {
  const char* config_path; /* NULL: defaults sized from the dataset */
  const char* data_dir;
  const char* out_dir;
  uint64_t seed;
  size_t epochs;
  size_t batch_size;
  size_t max_steps; /* 0: no limit */
  double lr;
  double momentum;
  double weight_decay;
  int decay_all; /* nonzero: also decay norm and position parameters */
  int skips;     /* -1: keep the config value */
  int patch;     /* 0: keep the config value */
  size_t height; /* 0: keep the config value */
  size_t width;
  tc_precision precision;
  tc_log_fn log;
  void* log_user;
} tc_train_options;

TC_API void tc_train_options_default(tc_train_options* options);
/* Writes history.csv, best.ckpt, last.ckpt and config.json under out_dir. */
TC_API tc_status tc_train(const tc_train_options* options);

typedef struct tc_eval_options {
  const char* checkpoint;
  const char* data_dir;
  const char* split; /* "train", "val" or "test" */
  const char* out_dir;
  size_t batch_size;
  tc_precision precision;
} tc_eval_options;

TC_API void tc_eval_options_default(tc_eval_options* options);
/* Writes report.csv and report.txt; mean_dice may be NULL and is NaN when
 * no class is defined. */
TC_API tc_status tc_evaluate(const tc_eval_options* options, double* mean_dice);

typedef struct tc_predict_options {
  const char* checkpoint;
  const char* const* inputs;
  size_t input_count;
  const char* out_dir;
  int color; /* nonzero: also write a colour-mapped .ppm */
  tc_precision precision;
} tc_predict_options;

TC_API void tc_predict_options_default(tc_predict_options* options);
TC_API tc_status tc_predict_files(const tc_predict_options* options);

typedef struct tc_ablate_options {
  const char* axis;   /* "skips", "patch" or "resolution" */
  const char* values; /* comma separated, e.g. "0,1,2,3" or "32,64x64" */
  const char* seeds;  /* comma separated */
  const char* config_path;
  const char* data_dir; /* NULL: generate phantoms */
  const char* out_dir;
  size_t samples;
  uint64_t data_seed;
  double noise_level;
  size_t epochs;
  size_t batch_size;
  double lr;
  double momentum;
  double weight_decay;
  int skips; /* base-config overrides, as for training */
  int patch;
  size_t height;
  size_t width;
  tc_log_fn log;
  void* log_user;
} tc_ablate_options;

TC_API void tc_ablate_options_default(tc_ablate_options* options);
/* Writes ablation.csv under out_dir. */
TC_API tc_status tc_ablate(const tc_ablate_options* options);

typedef void (*tc_gradcheck_row_fn)(const char* name, double max_error, int passed, void* user);

typedef struct tc_gradcheck_options {
  uint64_t seed;
  size_t seeds;       /* random draws per operator */
  size_t model_seeds; /* draws for the end-to-end model */
  double tolerance;
  const char* corrupt; /* NULL, or a case to corrupt as a negative control */
  tc_gradcheck_row_fn on_row;
  void* user;
} tc_gradcheck_options;

TC_API void tc_gradcheck_options_default(tc_gradcheck_options* options);
/* Always 64-bit. *all_passed is 1 when every row is under the tolerance. */
TC_API tc_status tc_gradcheck(const tc_gradcheck_options* options, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* TRANSCLAW_TRANSCLAW_H_ */
