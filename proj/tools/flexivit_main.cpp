// Command-line driver: train / distill / resize-verify / analyze / gen-data.
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "flexivit/runner.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::vector<int> sizes;
  long long steps = -1;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Experiment config file (key=value)");
  cmd->add_option("--seed", flags.seed, "Override the config seed");
  cmd->add_option("--out", flags.out_dir, "Override the output directory");
  cmd->add_option("--steps", flags.steps, "Override the step count");
  cmd->add_option("--sizes", flags.sizes, "Override the patch-size list")->delimiter(',');
}

flexivit::ExperimentConfig load_config(const CommonFlags& flags) {
  flexivit::ExperimentConfig cfg;
  if (!flags.config_path.empty())
    cfg = flexivit::ExperimentConfig::parse_file(flags.config_path);
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.steps >= 0) cfg.steps = flags.steps;
  if (!flags.sizes.empty()) cfg.patch_sizes = flags.sizes;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FlexiViT toolkit: flexible-patch-size vision transformers"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "Train a model (xent loss)");
  add_common(train, train_flags);

  CommonFlags distill_flags;
  std::string teacher_path;
  bool random_init = false;
  CLI::App* distill = app.add_subcommand("distill", "Distill from a teacher checkpoint");
  add_common(distill, distill_flags);
  distill->add_option("--teacher", teacher_path, "Teacher checkpoint (.fxt)")->required();
  distill->add_flag("--random-init", random_init,
                    "Skip teacher initialization (random init control)");

  int rv_p_in = 0, rv_p_out = 0, rv_trials = 1000;
  std::uint64_t rv_seed = 0;
  CLI::App* verify = app.add_subcommand("resize-verify", "Check resize-operator exactness");
  verify->add_option("p_in", rv_p_in, "Source side")->required();
  verify->add_option("p_out", rv_p_out, "Target side")->required();
  verify->add_option("trials", rv_trials, "Random trials");
  verify->add_option("--seed", rv_seed, "RNG seed");

  std::string an_ckpt, an_data;
  flexivit::AnalyzeOptions an_opts;
  CLI::App* analyze = app.add_subcommand("analyze", "Representation / prediction analysis");
  analyze->add_option("--ckpt", an_ckpt, "Model checkpoint (.fxt)")->required();
  analyze->add_option("--data", an_data, "Dataset file (.fxt, from gen-data)")->required();
  analyze->add_option("--mode", an_opts.mode, "cka | cosine | ensemble | sweep")->required();
  analyze->add_option("--sizes", an_opts.sizes, "Patch sizes")->delimiter(',')->required();
  analyze->add_option("--block", an_opts.block, "Block index (default: last)");
  analyze->add_option("--sublayer", an_opts.sublayer, "attn | mlp");
  analyze->add_option("--seed-size", an_opts.seed_size, "Cosine-map seed patch size");
  analyze->add_option("--out", an_opts.out_dir, "Output directory");

  std::string gd_out = "dataset.fxt";
  std::uint64_t gd_seed = 0;
  int gd_n = 2048, gd_side = 48, gd_channels = 1;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic shape dataset");
  gen->add_option("--out", gd_out, "Output file (.fxt)");
  gen->add_option("--seed", gd_seed, "RNG seed");
  gen->add_option("--n", gd_n, "Number of images");
  gen->add_option("--side", gd_side, "Image side length");
  gen->add_option("--channels", gd_channels, "1 or 3");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      flexivit::run_train(load_config(train_flags));
    } else if (*distill) {
      flexivit::run_distill(load_config(distill_flags), teacher_path, !random_init);
    } else if (*verify) {
      flexivit::ResizeVerifyReport report =
          flexivit::resize_verify(rv_p_in, rv_p_out, rv_trials, rv_seed);
      std::cout << flexivit::format_resize_report(report);
      return report.pass ? 0 : 1;
    } else if (*analyze) {
      flexivit::run_analyze(an_ckpt, an_data, an_opts);
    } else if (*gen) {
      flexivit::run_gen_data(gd_out, gd_seed, gd_n, gd_side, gd_channels);
    }
  } catch (const flexivit::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
