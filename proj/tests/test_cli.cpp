#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "test_util.hpp"
#include "transclaw/data.hpp"
#include "transclaw/serialize.hpp"

using namespace transclaw;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({"height": 16, "width": 16, "num_classes": 3, "conv_levels": 2,
  "base_channels": 4, "patch_size": 1, "transformer_layers": 1, "heads": 2,
  "model_width": 8, "mlp_width": 16, "bottleneck_channels": 8, "skips": 2})";

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(TRANSCLAW_CLI) + " " + args + " 2>&1";
  Run r;
  std::FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Shared dataset and config for one test.
struct Workspace {
  tctest::TempDir dir{"cli"};
  std::string data, config;
  Workspace() {
    data = (dir / "data").string();
    config = (dir / "tiny.json").string();
    std::ofstream(config) << kTiny;
    const auto r = cli("generate --out " + data + " --count 6 --classes 3 --resolution 16 --seed 2");
    EXPECT_EQ(r.code, 0) << r.out;
  }
  std::string train(const std::string& out) const {
    return "train --config " + config + " --data " + data + " --out " + out +
           " --epochs 2 --batch-size 2 --seed 1";
  }
};

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train --epochs").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("train --data x --out y --precision f16").code, 2);
}

TEST(Cli, TrainWritesArtifactsAndIsReproducible) {
  Workspace w;
  const auto a = (w.dir / "a").string(), b = (w.dir / "b").string();
  auto r = cli(w.train(a));
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"history.csv", "best.ckpt", "last.ckpt", "config.json"})
    EXPECT_TRUE(fs::exists(fs::path(a) / f)) << f;
  r = cli(w.train(b));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(fs::path(a) / "history.csv"), slurp(fs::path(b) / "history.csv"));
  EXPECT_EQ(slurp(fs::path(a) / "last.ckpt"), slurp(fs::path(b) / "last.ckpt"));
  EXPECT_EQ(line_count(slurp(fs::path(a) / "history.csv")), 3u);
}

TEST(Cli, MissingDatasetNamesThePath) {
  tctest::TempDir dir("cli_missing");
  const auto r = cli("train --data /nonexistent/phantoms --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/nonexistent/phantoms"), std::string::npos) << r.out;
}

TEST(Cli, BadConfigIsAnInputError) {
  Workspace w;
  std::ofstream(w.dir / "bad.json") << R"({"heads": 3, "model_width": 8})";
  const auto r = cli("train --config " + (w.dir / "bad.json").string() + " --data " + w.data +
                     " --out " + (w.dir / "run").string());
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, EvalAndPredict) {
  Workspace w;
  const auto run = (w.dir / "run").string();
  ASSERT_EQ(cli(w.train(run)).code, 0);
  const auto ckpt = run + "/best.ckpt";

  const auto e = cli("eval --checkpoint " + ckpt + " --data " + w.data + " --split val --out " +
                     (w.dir / "eval").string());
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("mean dice"), std::string::npos);
  const auto csv = slurp(w.dir / "eval" / "report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,dice,ahd,hd95");
  EXPECT_TRUE(fs::exists(w.dir / "eval" / "report.txt"));

  PhantomOptions o;
  o.count = 2;
  o.classes = 3;
  o.height = o.width = 16;
  const auto samples = generate_samples(o);
  const auto in0 = (w.dir / "img0.tct").string(), in1 = (w.dir / "img1.tct").string();
  save_tensor(in0, samples[0].image);
  save_tensor(in1, samples[1].image);
  for (const char* sub : {"p1", "p2"}) {
    const auto r = cli("predict --checkpoint " + ckpt + " --out " + (w.dir / sub).string() +
                       " --color " + in0 + " " + in1);
    ASSERT_EQ(r.code, 0) << r.out;
  }
  for (const char* stem : {"img0", "img1"}) {
    std::size_t h = 0, wd = 0;
    const auto m = load_mask(w.dir / "p1" / (std::string(stem) + ".mask"), &h, &wd);
    EXPECT_EQ(h, 16u);
    EXPECT_EQ(m.size(), 256u);
    for (auto v : m) EXPECT_LT(v, 3);
    EXPECT_EQ(slurp(w.dir / "p1" / (std::string(stem) + ".mask")),
              slurp(w.dir / "p2" / (std::string(stem) + ".mask")));
    EXPECT_TRUE(fs::exists(w.dir / "p1" / (std::string(stem) + ".ppm")));
  }

  const auto missing = cli("eval --checkpoint " + (w.dir / "none.ckpt").string() + " --data " + w.data +
                           " --out " + (w.dir / "e2").string());
  EXPECT_EQ(missing.code, 2);
}

TEST(Cli, GradcheckExitStatus) {
  auto r = cli("gradcheck --seeds 2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all cases passed"), std::string::npos);
  r = cli("gradcheck --seeds 2 --corrupt relu");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli("gradcheck --corrupt bogus").code, 2);
}

TEST(Cli, AblationRowCounts) {
  tctest::TempDir dir("cli_ablate");
  const auto config = (dir / "tiny.json").string();
  std::ofstream(config) << R"({"height": 16, "width": 16, "num_classes": 3, "conv_levels": 3,
    "base_channels": 4, "patch_size": 1, "transformer_layers": 1, "heads": 2,
    "model_width": 8, "mlp_width": 16, "bottleneck_channels": 8, "skips": 3})";
  const std::string common = " --config " + config + " --samples 5 --epochs 1 --batch-size 2 --seeds 0,1";

  auto r = cli("ablate --axis skips --values 0,1,2,3 --out " + (dir / "s").string() + common);
  ASSERT_EQ(r.code, 0) << r.out;
  auto csv = slurp(dir / "s" / "ablation.csv");
  EXPECT_EQ(line_count(csv), 1u + 4 * 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "axis,value,seed,mean_dice,mean_ahd,class_1_dice,class_2_dice");

  r = cli("ablate --axis patch --values 1,2 --out " + (dir / "p").string() + common);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(line_count(slurp(dir / "p" / "ablation.csv")), 1u + 2 * 2);

  EXPECT_EQ(cli("ablate --axis depth --values 1 --out " + (dir / "x").string() + common).code, 2);
}
