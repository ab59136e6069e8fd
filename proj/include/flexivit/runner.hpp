#pragma once

#include <string>
#include <vector>

#include "flexivit/analyze.hpp"
#include "flexivit/config.hpp"
#include "flexivit/train.hpp"

namespace flexivit {

// Checkpoint = every FlexiParams tensor under its canonical name plus a
// "meta" vector carrying the encoder configuration.
void save_checkpoint(const std::string& path, const FlexiParams& params,
                     const EncoderConfig& config);

struct Checkpoint {
  FlexiParams params;
  EncoderConfig config;
};
Checkpoint load_checkpoint(const std::string& path);

// Builds the model/train configs and patch-size schedule described by an
// experiment config.
EncoderConfig encoder_config_of(const ExperimentConfig& cfg);
TrainConfig train_config_of(const ExperimentConfig& cfg);
Schedule schedule_of(const ExperimentConfig& cfg);
PatchSizeDistribution distribution_of(const std::vector<int>& sizes,
                                      const std::string& weights);

// `train` subcommand: trains on the generated dataset and writes
// checkpoint.fxt, metrics.csv, sweep.csv and config.echo.txt to out_dir.
void run_train(const ExperimentConfig& cfg);

// `distill` subcommand: teacher-initializes (unless disabled), trains with
// the KL loss against the teacher checkpoint, and additionally records
// init_agreement.csv (one row per eval patch size).
void run_distill(const ExperimentConfig& cfg, const std::string& teacher_ckpt,
                 bool teacher_initialize = true);

// `resize-verify` subcommand support.
struct ResizeVerifyReport {
  int p_in = 0;
  int p_out = 0;
  int trials = 0;
  // Max |<x,w> - <resize(x), resize(w)>| over random pairs, per method.
  double pi_dev = 0.0;
  double vanilla_dev = 0.0;
  double area_dev = 0.0;
  double norm_dev = 0.0;
  // Downsampling: PI residual ||w - B^T w_hat||^2 vs the least-squares oracle.
  double pi_residual = 0.0;
  double oracle_residual = 0.0;
  bool pass = false;
};
ResizeVerifyReport resize_verify(int p_in, int p_out, int trials,
                                 std::uint64_t seed = 0);
std::string format_resize_report(const ResizeVerifyReport& r);

// `analyze` subcommand: emits CSV artifacts for one of
// {sweep, cka, cosine, ensemble}.
struct AnalyzeOptions {
  std::string mode;
  std::vector<int> sizes;
  int block = -1;             // cosine/cka: block index (-1: last block)
  std::string sublayer = "mlp";
  int seed_size = 0;          // cosine: seed patch size (0: first of sizes)
  std::string out_dir = "out";
};
void run_analyze(const std::string& checkpoint_path, const std::string& dataset_path,
                 const AnalyzeOptions& opts);

void run_gen_data(const std::string& out_path, std::uint64_t seed, int n, int side,
                  int channels);

// CSV helpers shared by commands and tests.
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string evals_csv(const std::vector<EvalRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace flexivit
