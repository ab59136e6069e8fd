#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "flexivit/encoder.hpp"
#include "flexivit/rng.hpp"

namespace flexivit {

// Raised when a loss turns non-finite; the CLI maps it to exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Weighted finite set of admissible patch sizes, sampled once per step.
struct PatchSizeDistribution {
  std::vector<int> sizes;
  std::vector<double> weights;

  static PatchSizeDistribution uniform(std::vector<int> sizes);
  static PatchSizeDistribution single(int size);

  // Monotone sizes, nonnegative weights with a positive sum.
  void validate() const;
  // Additionally requires every size to tile `image_side`.
  void validate_for_side(int image_side) const;
};

// Legacy weighting: sizes in [16, 30] get weight 3, others weight 1.
PatchSizeDistribution triangular_distribution(std::vector<int> sizes);

int sample_patch_size(const PatchSizeDistribution& dist, Rng& rng);

// Two-phase schedule: pure large-patch training, an optional linear ramp,
// then the target distribution.
//   pure-large steps : schedule_fraction * total_steps
//   ramp steps       : ramp_fraction * (1 - schedule_fraction) * total_steps
struct Curriculum {
  PatchSizeDistribution large_dist;
  PatchSizeDistribution target_dist;
  double schedule_fraction = 0.0;
  double ramp_fraction = 0.0;
  long long total_steps = 0;

  void validate() const;
  long long phase_steps() const;  // pure-large length
  long long ramp_steps() const;
};

PatchSizeDistribution curriculum_distribution(const Curriculum& cur, long long step);

// Softmax cross-entropy; optionally returns d(loss)/d(logits).
double supervised_loss(const Eigen::VectorXd& logits, int label,
                       Eigen::VectorXd* d_logits = nullptr);

// KL(softmax(teacher/T) || softmax(student/T)); the teacher is a constant.
double distill_loss(const Eigen::VectorXd& student_logits,
                    const Eigen::VectorXd& teacher_logits, double temperature,
                    Eigen::VectorXd* d_student = nullptr);

// Initializes a flexi student from a fixed-size teacher: encoder blocks,
// head and CLS copied verbatim, the patch kernel PI-resized per slice to
// the student's underlying side, the position grid bilinearly resized.
FlexiParams teacher_init(const FlexiParams& teacher, int underlying_patch,
                         int underlying_grid);

enum class LossKind { kXent, kDistill };

struct TrainConfig {
  long long steps = 600;
  int batch_size = 16;
  double lr = 1e-3;
  long long warmup_steps = 50;
  bool cosine_decay = true;
  LossKind loss = LossKind::kXent;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int image_side = 48;
  std::vector<int> eval_sizes;  // sizes for periodic accuracy sweeps
  long long eval_every = 0;     // 0 = final sweep only

  void validate() const;
};

double lr_at_step(const TrainConfig& cfg, long long step);

struct TeacherSpec {
  const FlexiParams* params = nullptr;
  const EncoderConfig* config = nullptr;
  int patch_size = 0;
};

struct MetricRow {
  long long step;
  int patch_size;
  double loss;
  double lr;
};

struct EvalRow {
  long long step;
  int patch_size;
  double accuracy;
};

struct TrainResult {
  FlexiParams params;
  std::vector<MetricRow> metrics;
  std::vector<EvalRow> evals;
};

using Schedule = std::variant<PatchSizeDistribution, Curriculum>;

// One patch size per step, gradient clipping at global norm 1.0, Adam
// update with linear warmup and cosine decay. With a teacher, the loss is
// the KL divergence against the teacher evaluated at its own fixed patch
// size on the same image (the teacher's logits are precomputed once).
TrainResult train_flexi(const TrainConfig& cfg, const EncoderConfig& model_cfg,
                        const Schedule& schedule, const ShapeDataset& train_data,
                        const ShapeDataset* eval_data = nullptr,
                        const FlexiParams* init = nullptr,
                        const TeacherSpec* teacher = nullptr);

// Accuracy of argmax predictions at one patch size.
double evaluate_accuracy(const FlexiParams& params, const EncoderConfig& config,
                         const ShapeDataset& data, int patch_size,
                         ResizeCache* cache = nullptr);

}  // namespace flexivit
