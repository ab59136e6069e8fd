#pragma once

#include <Eigen/Dense>
#include <vector>

#include "flexivit/encoder.hpp"

namespace flexivit {

enum class Sublayer { kAttn, kMlp };

struct FeatureTag {
  int block = 0;
  Sublayer sublayer = Sublayer::kMlp;
  int patch_size = 0;
};

// Rows are examples, columns feature dimensions.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  FeatureTag tag;
};

// Linear centered kernel alignment on column-centered features:
//   ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F).
// All-constant features are rejected rather than producing 0/0.
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Minibatch estimator: unbiased HSIC per batch, averaged across batches
// before combining. Needs at least 4 rows per batch.
double minibatch_linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            int batch_size = 256);

// arccos of a similarity in [0, 1]; inputs within 1e-9 outside the range
// are clamped, anything further is an error.
double arccos_distance(double similarity);

// Mean-over-dataset cosine similarity between the center token of the
// p-grid and every token of the q-grid, at one block and sublayer.
// Zero-norm representations contribute 0 and are counted as warnings.
struct CosineMap {
  Eigen::MatrixXd grid;  // (side/q) x (side/q)
  int warnings = 0;
  int seed_row = 0;      // seed index in the p-grid (both axes)
};

CosineMap token_cosine_map(const FlexiParams& params, const EncoderConfig& config,
                           const ShapeDataset& data, int block, Sublayer sublayer,
                           int seed_size, int target_size,
                           ResizeCache* cache = nullptr);

// Center-seed index for a grid side: top-left of the central 2x2 on even
// grids, the exact center on odd grids.
inline int center_seed_index(int grid) { return (grid - 1) / 2; }

// Mean of the per-example logits, then argmax.
Eigen::VectorXi ensemble_predict(const std::vector<Eigen::MatrixXd>& logit_sets);

Eigen::VectorXi predictions(const Eigen::MatrixXd& logits);

double agreement(const Eigen::VectorXi& a, const Eigen::VectorXi& b);

// Deterministic closed-form compute estimate. Per block:
//   attention: 4 s d^2 + 2 s^2 d,  MLP: 4 s mlp_ratio d^2
// plus the patch embedding s p^2 c d.
struct FlopsBreakdown {
  double embed = 0.0;
  double attn_linear = 0.0;
  double attn_quadratic = 0.0;
  double mlp = 0.0;
  double total() const { return embed + attn_linear + attn_quadratic + mlp; }
};

FlopsBreakdown flops_estimate(const EncoderConfig& config, long long seq_len,
                              int patch_size, int depth_limit = -1);

// Expected per-step estimate under a patch-size distribution (training-cost
// accounting for curricula).
double expected_flops(const EncoderConfig& config, const struct PatchSizeDistribution& dist,
                      int image_side);

struct SweepRow {
  int patch_size = 0;
  double accuracy = 0.0;
  double gflops = 0.0;
  long long seq_len = 0;
};

// Accuracy/compute sweep over patch sizes; sizes outside the training
// distribution are allowed (extrapolation).
std::vector<SweepRow> eval_sweep(const FlexiParams& params, const EncoderConfig& config,
                                 const ShapeDataset& data, const std::vector<int>& sizes,
                                 ResizeCache* cache = nullptr);

// Per-example logits for a whole dataset at one patch size (rows: examples).
Eigen::MatrixXd dataset_logits(const FlexiParams& params, const EncoderConfig& config,
                               const ShapeDataset& data, int patch_size,
                               ResizeCache* cache = nullptr);

// Pooled (mean over patch tokens) block features for a whole dataset.
FeatureMatrix dataset_features(const FlexiParams& params, const EncoderConfig& config,
                               const ShapeDataset& data, int block, Sublayer sublayer,
                               int patch_size, ResizeCache* cache = nullptr);

}  // namespace flexivit
