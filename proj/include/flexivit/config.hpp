#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flexivit {

// Flat key=value experiment description ('#' starts a comment). Unknown
// keys are rejected; every key has a default, listed in the README. The
// effective config is echoed in canonical form into the output directory
// and reparses to an identical value.
struct ExperimentConfig {
  // Model.
  int depth = 4;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int num_classes = 8;
  int underlying_patch = 32;
  int underlying_grid = 7;
  int channels = 1;

  // Data.
  int image_side = 48;
  int train_n = 2048;
  int eval_n = 512;

  // Patch-size schedule.
  std::vector<int> patch_sizes = {24, 16, 12, 8, 6};
  std::string patch_weights = "uniform";  // uniform | triangular | w1,w2,...
  bool curriculum = false;
  double schedule_fraction = 0.75;
  double ramp_fraction = 0.0;
  std::vector<int> large_sizes;
  std::string large_weights = "uniform";

  // Optimization.
  std::string loss = "xent";  // xent | distill
  double temperature = 1.0;
  long long steps = 600;
  int batch_size = 16;
  double lr = 1e-3;
  long long warmup_steps = 50;
  bool cosine_decay = true;

  // Bookkeeping.
  std::uint64_t seed = 0;
  std::vector<int> eval_sizes;  // empty: same as patch_sizes
  long long eval_every = 0;
  std::string out_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;

  static ExperimentConfig parse_string(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);

  // Canonical echo: every key, fixed order.
  std::string canonical_text() const;

  void validate() const;
  std::vector<int> effective_eval_sizes() const;
};

std::string format_double(double v);
std::vector<int> parse_int_list(const std::string& s);

}  // namespace flexivit
