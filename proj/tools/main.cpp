// transclaw: command-line front end over the C API.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "transclaw/transclaw.h"

namespace {

int report(tc_status status) {
  if (status != TC_OK) {
    std::cerr << "error (" << tc_status_name(status) << "): " << tc_last_error() << "\n";
  }
  return tc_exit_code(status);
}

void log_line(const char* line, void*) { std::cerr << line << "\n"; }

bool parse_resolution(const std::string& text, size_t& h, size_t& w) {
  if (text.empty()) return true;
  const auto x = text.find('x');
  try {
    size_t used = 0;
    h = std::stoul(text.substr(0, x), &used);
    if (used != (x == std::string::npos ? text.size() : x)) return false;
    if (x == std::string::npos) {
      w = h;
      return true;
    }
    const auto rest = text.substr(x + 1);
    w = std::stoul(rest, &used);
    return used == rest.size();
  } catch (const std::exception&) {
    return false;
  }
}

tc_precision precision_of(const std::string& text) {
  return text == "f64" ? TC_F64 : TC_F32;
}

void gradcheck_row(const char* name, double max_error, int passed, void*) {
  std::printf("%-22s %12.3e  %s\n", name, max_error, passed ? "ok" : "FAIL");
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransClaw U-Net: train, evaluate and ablate on synthetic phantoms"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tc_version());

  // generate
  tc_generate_options gen;
  tc_generate_options_default(&gen);
  std::string gen_out, gen_res = "64";
  auto* generate = app.add_subcommand("generate", "Write a synthetic phantom dataset");
  generate->add_option("--out", gen_out, "Dataset directory")->required();
  generate->add_option("--count", gen.count, "Number of samples")->capture_default_str();
  generate->add_option("--classes", gen.classes, "Classes including background")->capture_default_str();
  generate->add_option("--resolution", gen_res, "HxW or a single extent")->capture_default_str();
  generate->add_option("--channels", gen.channels, "Image channels")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--noise", gen.noise_level, "Noise level")->capture_default_str();
  generate->add_option("--val-fraction", gen.val_fraction)->capture_default_str();
  generate->add_option("--test-fraction", gen.test_fraction)->capture_default_str();

  // train
  tc_train_options tr;
  tc_train_options_default(&tr);
  std::string tr_config, tr_data, tr_out, tr_res, tr_precision = "f32";
  bool tr_decay_all = false;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", tr_config, "Model config JSON");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--seed", tr.seed, "Initialisation and shuffle seed")->capture_default_str();
  train->add_option("--epochs", tr.epochs)->capture_default_str();
  train->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train->add_option("--max-steps", tr.max_steps, "Stop after this many steps (0 = no limit)");
  train->add_option("--lr", tr.lr)->capture_default_str();
  train->add_option("--momentum", tr.momentum)->capture_default_str();
  train->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
  train->add_flag("--decay-all", tr_decay_all, "Also decay norm and position parameters");
  train->add_option("--skips", tr.skips, "Skip budget override");
  train->add_option("--patch", tr.patch, "Patch size on the deepest feature map");
  train->add_option("--resolution", tr_res, "Input extent override, HxW");
  train->add_option("--precision", tr_precision)->check(CLI::IsMember({"f32", "f64"}));

  // eval
  tc_eval_options ev;
  tc_eval_options_default(&ev);
  std::string ev_ckpt, ev_data, ev_out, ev_split = "test", ev_precision = "f32";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ev_ckpt)->required();
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--out", ev_out, "Output directory")->required();
  eval->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval->add_option("--batch-size", ev.batch_size)->capture_default_str();
  eval->add_option("--precision", ev_precision)->check(CLI::IsMember({"f32", "f64"}));

  // predict
  tc_predict_options pr;
  tc_predict_options_default(&pr);
  std::string pr_ckpt, pr_out, pr_precision = "f32";
  std::vector<std::string> pr_inputs;
  bool pr_color = false;
  auto* predict = app.add_subcommand("predict", "Write argmax masks for image files");
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--out", pr_out, "Output directory")->required();
  predict->add_flag("--color", pr_color, "Also write colour-mapped PPM images");
  predict->add_option("--precision", pr_precision)->check(CLI::IsMember({"f32", "f64"}));
  predict->add_option("inputs", pr_inputs, "Image tensors or sample files")->required();

  // ablate
  tc_ablate_options ab;
  tc_ablate_options_default(&ab);
  std::string ab_axis = ab.axis, ab_values = ab.values, ab_seeds = ab.seeds, ab_config, ab_data,
              ab_out, ab_res;
  auto* ablate = app.add_subcommand("ablate", "Sweep skips, patch size or resolution");
  ablate->add_option("--axis", ab_axis)->check(CLI::IsMember({"skips", "patch", "resolution"}))
      ->capture_default_str();
  ablate->add_option("--values", ab_values, "Comma-separated values")->capture_default_str();
  ablate->add_option("--seeds", ab_seeds, "Comma-separated seeds")->capture_default_str();
  ablate->add_option("--config", ab_config, "Base model config JSON");
  ablate->add_option("--data", ab_data, "Dataset directory (default: generated phantoms)");
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_option("--samples", ab.samples, "Generated phantoms per cell")->capture_default_str();
  ablate->add_option("--data-seed", ab.data_seed)->capture_default_str();
  ablate->add_option("--noise", ab.noise_level)->capture_default_str();
  ablate->add_option("--epochs", ab.epochs)->capture_default_str();
  ablate->add_option("--batch-size", ab.batch_size)->capture_default_str();
  ablate->add_option("--lr", ab.lr)->capture_default_str();
  ablate->add_option("--momentum", ab.momentum)->capture_default_str();
  ablate->add_option("--weight-decay", ab.weight_decay)->capture_default_str();
  ablate->add_option("--skips", ab.skips, "Base skip budget");
  ablate->add_option("--patch", ab.patch, "Base patch size");
  ablate->add_option("--resolution", ab_res, "Base input extent, HxW");

  // gradcheck
  tc_gradcheck_options gc;
  tc_gradcheck_options_default(&gc);
  std::string gc_corrupt, gc_precision;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every operator");
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--seeds", gc.seeds, "Random draws per operator")->capture_default_str();
  gradcheck->add_option("--model-seeds", gc.model_seeds)->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
  gradcheck->add_option("--corrupt", gc_corrupt, "Skew one case's backward rule");
  gradcheck->add_option("--precision", gc_precision, "Ignored: always f64");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (generate->parsed()) {
    gen.out_dir = gen_out.c_str();
    if (!parse_resolution(gen_res, gen.height, gen.width)) {
      std::cerr << "error: bad --resolution \"" << gen_res << "\"\n";
      return 2;
    }
    return report(tc_generate_phantoms(&gen));
  }
  if (train->parsed()) {
    tr.config_path = tr_config.empty() ? nullptr : tr_config.c_str();
    tr.data_dir = tr_data.c_str();
    tr.out_dir = tr_out.c_str();
    tr.decay_all = tr_decay_all ? 1 : 0;
    tr.precision = precision_of(tr_precision);
    if (!parse_resolution(tr_res, tr.height, tr.width)) {
      std::cerr << "error: bad --resolution \"" << tr_res << "\"\n";
      return 2;
    }
    tr.log = log_line;
    return report(tc_train(&tr));
  }
  if (eval->parsed()) {
    ev.checkpoint = ev_ckpt.c_str();
    ev.data_dir = ev_data.c_str();
    ev.out_dir = ev_out.c_str();
    ev.split = ev_split.c_str();
    ev.precision = precision_of(ev_precision);
    double mean_dice = 0;
    const auto status = tc_evaluate(&ev, &mean_dice);
    if (status == TC_OK) {
      if (std::isnan(mean_dice)) {
        std::printf("mean dice n/a\n");
      } else {
        std::printf("mean dice %.6f\n", mean_dice);
      }
    }
    return report(status);
  }
  if (predict->parsed()) {
    std::vector<const char*> inputs;
    for (const auto& s : pr_inputs) inputs.push_back(s.c_str());
    pr.checkpoint = pr_ckpt.c_str();
    pr.out_dir = pr_out.c_str();
    pr.inputs = inputs.data();
    pr.input_count = inputs.size();
    pr.color = pr_color ? 1 : 0;
    pr.precision = precision_of(pr_precision);
    return report(tc_predict_files(&pr));
  }
  if (ablate->parsed()) {
    ab.axis = ab_axis.c_str();
    ab.values = ab_values.c_str();
    ab.seeds = ab_seeds.c_str();
    ab.config_path = ab_config.empty() ? nullptr : ab_config.c_str();
    ab.data_dir = ab_data.empty() ? nullptr : ab_data.c_str();
    ab.out_dir = ab_out.c_str();
    if (!parse_resolution(ab_res, ab.height, ab.width)) {
      std::cerr << "error: bad --resolution \"" << ab_res << "\"\n";
      return 2;
    }
    ab.log = log_line;
    return report(tc_ablate(&ab));
  }
  if (gradcheck->parsed()) {
    if (!gc_precision.empty() && gc_precision != "f64") {
      std::cerr << "note: gradcheck always runs in f64\n";
    }
    gc.corrupt = gc_corrupt.empty() ? nullptr : gc_corrupt.c_str();
    gc.on_row = gradcheck_row;
    std::printf("%-22s %12s  %s\n", "case", "max_rel_err", "status");
    int all_passed = 0;
    const auto status = tc_gradcheck(&gc, &all_passed);
    if (status != TC_OK) return report(status);
    std::printf("%s\n", all_passed ? "all cases passed" : "some cases failed");
    return all_passed ? 0 : 1;
  }
  return 2;
}
