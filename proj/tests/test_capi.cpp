#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "transclaw/transclaw.h"

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({"height": 16, "width": 16, "num_classes": 3, "conv_levels": 2,
  "base_channels": 4, "patch_size": 1, "transformer_layers": 1, "heads": 2,
  "model_width": 8, "mlp_width": 16, "bottleneck_channels": 8, "skips": 2})";

struct Scratch {
  fs::path path;
  explicit Scratch(const char* tag)
      : path(fs::temp_directory_path() / (std::string("tc_capi_") + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<float> ramp(std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(i % 17) / 16.0f;
  return v;
}

}  // namespace

TEST(CApi, StatusNamesAndExitCodes) {
  EXPECT_STREQ(tc_status_name(TC_OK), "ok");
  EXPECT_STREQ(tc_status_name(TC_ERR_IO), "io error");
  EXPECT_EQ(tc_exit_code(TC_OK), 0);
  for (tc_status s : {TC_ERR_DIMENSION, TC_ERR_CONFIG, TC_ERR_FORMAT, TC_ERR_IO, TC_ERR_INVALID_ARGUMENT})
    EXPECT_EQ(tc_exit_code(s), 2) << s;
  for (tc_status s : {TC_ERR_NUMERIC, TC_ERR_GRAPH, TC_ERR_INTERNAL}) EXPECT_EQ(tc_exit_code(s), 1) << s;
  EXPECT_NE(std::string(tc_version()), "");
}

TEST(CApi, ErrorsCarryMessages) {
  tc_model* m = nullptr;
  EXPECT_EQ(tc_model_create("{not json", 0, &m), TC_ERR_FORMAT);
  EXPECT_EQ(m, nullptr);
  EXPECT_NE(std::string(tc_last_error()), "");
  EXPECT_EQ(tc_model_create(R"({"heads": 3})", 0, &m), TC_ERR_CONFIG);
  EXPECT_NE(std::string(tc_last_error()).find("head"), std::string::npos) << tc_last_error();
  EXPECT_EQ(tc_model_create(R"({"colour": 1})", 0, &m), TC_ERR_FORMAT);
  EXPECT_EQ(tc_model_create(kTiny, 0, nullptr), TC_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(tc_model_load("/nonexistent/m.tcun", &m), TC_ERR_IO);
  EXPECT_NE(std::string(tc_last_error()).find("/nonexistent/m.tcun"), std::string::npos);
}

TEST(CApi, ModelLifecycle) {
  Scratch dir("model");
  tc_model* m = nullptr;
  ASSERT_EQ(tc_model_create(kTiny, 7, &m), TC_OK) << tc_last_error();
  size_t c = 0, h = 0, w = 0, k = 0, params = 0;
  ASSERT_EQ(tc_model_shape(m, &c, &h, &w, &k), TC_OK);
  EXPECT_EQ(c, 1u);
  EXPECT_EQ(h, 16u);
  EXPECT_EQ(k, 3u);
  ASSERT_EQ(tc_model_parameter_count(m, &params), TC_OK);
  EXPECT_GT(params, 0u);

  const auto input = ramp(2 * 16 * 16);
  std::vector<float> logits(2 * 3 * 16 * 16);
  ASSERT_EQ(tc_model_forward(m, input.data(), 2, logits.data(), logits.size()), TC_OK) << tc_last_error();
  for (float v : logits) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(tc_model_forward(m, input.data(), 2, logits.data(), logits.size() - 1), TC_ERR_DIMENSION);

  std::vector<uint8_t> labels(2 * 16 * 16);
  ASSERT_EQ(tc_model_predict(m, input.data(), 2, labels.data(), labels.size()), TC_OK);
  for (std::size_t p = 0; p < 16 * 16; ++p) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 3; ++j)
      if (logits[j * 256 + p] > logits[best * 256 + p]) best = j;
    EXPECT_EQ(labels[p], best);
  }

  const std::string path = (dir.path / "m.tcun").string();
  ASSERT_EQ(tc_model_save(m, path.c_str()), TC_OK) << tc_last_error();
  tc_model* r = nullptr;
  ASSERT_EQ(tc_model_load(path.c_str(), &r), TC_OK) << tc_last_error();
  std::vector<float> again(logits.size());
  ASSERT_EQ(tc_model_forward(r, input.data(), 2, again.data(), again.size()), TC_OK);
  EXPECT_EQ(again, logits);
  tc_model_free(r);
  tc_model_free(m);
  tc_model_free(nullptr);
}

TEST(CApi, ConfigJsonBufferSizing) {
  tc_model* m = nullptr;
  ASSERT_EQ(tc_model_create(kTiny, 0, &m), TC_OK);
  size_t needed = 0;
  ASSERT_EQ(tc_model_config_json(m, nullptr, 0, &needed), TC_OK);
  ASSERT_GT(needed, 1u);
  std::vector<char> small(8);
  EXPECT_EQ(tc_model_config_json(m, small.data(), small.size(), &needed), TC_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(small.back(), '\0');
  std::vector<char> buf(needed);
  ASSERT_EQ(tc_model_config_json(m, buf.data(), buf.size(), nullptr), TC_OK);
  const std::string text(buf.data());
  EXPECT_EQ(text.size() + 1, needed);
  EXPECT_NE(text.find("\"base_channels\": 4"), std::string::npos);

  tc_model* copy = nullptr;
  ASSERT_EQ(tc_model_create(text.c_str(), 0, &copy), TC_OK);
  std::vector<char> buf2(needed);
  ASSERT_EQ(tc_model_config_json(copy, buf2.data(), buf2.size(), nullptr), TC_OK);
  EXPECT_EQ(buf, buf2);
  tc_model_free(copy);
  tc_model_free(m);
}

TEST(CApi, GenerateTrainEvaluate) {
  Scratch dir("pipeline");
  const std::string data = (dir.path / "data").string(), run = (dir.path / "run").string(),
                    cfg = (dir.path / "tiny.json").string();
  {
    std::FILE* f = std::fopen(cfg.c_str(), "w");
    std::fputs(kTiny, f);
    std::fclose(f);
  }
  tc_generate_options g;
  tc_generate_options_default(&g);
  g.out_dir = data.c_str();
  g.count = 6;
  g.classes = 3;
  g.height = g.width = 16;
  ASSERT_EQ(tc_generate_phantoms(&g), TC_OK) << tc_last_error();

  tc_train_options t;
  tc_train_options_default(&t);
  t.config_path = cfg.c_str();
  t.data_dir = data.c_str();
  t.out_dir = run.c_str();
  t.epochs = 2;
  t.batch_size = 2;
  std::vector<std::string> lines;
  t.log = [](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); };
  t.log_user = &lines;
  ASSERT_EQ(tc_train(&t), TC_OK) << tc_last_error();
  EXPECT_FALSE(lines.empty());
  for (const char* f : {"history.csv", "best.ckpt", "last.ckpt", "config.json"})
    EXPECT_TRUE(fs::exists(dir.path / "run" / f)) << f;

  tc_eval_options e;
  tc_eval_options_default(&e);
  const std::string ckpt = run + "/last.ckpt", report = (dir.path / "report").string();
  e.checkpoint = ckpt.c_str();
  e.data_dir = data.c_str();
  e.out_dir = report.c_str();
  e.split = "val";
  double dice = -1;
  ASSERT_EQ(tc_evaluate(&e, &dice), TC_OK) << tc_last_error();
  EXPECT_TRUE(std::isnan(dice) || (dice >= 0 && dice <= 1));
  EXPECT_TRUE(fs::exists(dir.path / "report" / "report.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "report" / "report.txt"));

  e.split = "holdout";
  EXPECT_EQ(tc_evaluate(&e, nullptr), TC_ERR_INVALID_ARGUMENT);
  t.data_dir = "/nonexistent/data";
  EXPECT_EQ(tc_train(&t), TC_ERR_IO);
  EXPECT_NE(std::string(tc_last_error()).find("/nonexistent/data"), std::string::npos);
}

TEST(CApi, GradcheckNegativeControl) {
  tc_gradcheck_options o;
  tc_gradcheck_options_default(&o);
  o.seeds = 2;
  o.corrupt = "relu";
  int passed = -1, rows = 0;
  o.on_row = [](const char*, double, int, void* user) { ++*static_cast<int*>(user); };
  o.user = &rows;
  ASSERT_EQ(tc_gradcheck(&o, &passed), TC_OK) << tc_last_error();
  EXPECT_EQ(passed, 0);
  EXPECT_GT(rows, 10);
  o.corrupt = "bogus";
  EXPECT_EQ(tc_gradcheck(&o, &passed), TC_ERR_INVALID_ARGUMENT);
}
