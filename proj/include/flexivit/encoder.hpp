#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flexivit/embedding.hpp"

namespace flexivit {

struct EncoderConfig {
  int depth = 4;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int num_classes = 8;
  // Underlying parameter shapes (resized on the fly in the forward pass).
  int underlying_patch = 32;
  int underlying_grid = 7;
  int channels = 1;

  int hidden() const { return width * mlp_ratio; }
  int head_dim() const { return width / heads; }
  void validate() const;
};

struct LayerNormParams {
  Eigen::VectorXd scale;
  Eigen::VectorXd offset;
};

struct BlockParams {
  LayerNormParams ln1, ln2;
  Eigen::MatrixXd wq, wk, wv, wo;  // width x width, applied as y = x * W + b
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::MatrixXd w1, w2;          // width x hidden, hidden x width
  Eigen::VectorXd b1, b2;
};

// Every learnable tensor of the model. Also reused as the container for
// gradients and optimizer moments (identical shapes).
struct FlexiParams {
  PatchKernel kernel;
  PosGrid pos;
  Eigen::VectorXd cls;
  std::vector<BlockParams> blocks;
  LayerNormParams final_norm;
  Eigen::MatrixXd head_w;  // width x num_classes
  Eigen::VectorXd head_b;
};

// Deterministic initialization: truncated-normal kernel (sigma 0.02) and
// small-normal position grid, fan-in-scaled truncated-normal block weights,
// zero biases and CLS, zero head.
FlexiParams init_params(const EncoderConfig& config, std::uint64_t seed);

FlexiParams zeros_like(const FlexiParams& params);

// Named flat views over every tensor, in a fixed canonical order. The
// names double as the checkpoint tensor names.
struct TensorView {
  std::string name;
  double* data;
  std::size_t size;
  std::vector<std::uint32_t> dims;
};
std::vector<TensorView> tensor_views(FlexiParams& params);

double param_squared_norm(FlexiParams& params);

struct BlockCache {
  Eigen::MatrixXd x_in;
  Eigen::MatrixXd ln1_hat;  // normalized pre-scale activations
  Eigen::VectorXd ln1_rstd;
  Eigen::MatrixXd ln1_out;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per-head row-softmax probabilities
  Eigen::MatrixXd attn_concat;
  Eigen::MatrixXd x_mid;    // post-attention residual
  Eigen::MatrixXd ln2_hat;
  Eigen::VectorXd ln2_rstd;
  Eigen::MatrixXd ln2_out;
  Eigen::MatrixXd mlp_pre;  // pre-GELU
  Eigen::MatrixXd mlp_act;
  Eigen::MatrixXd x_out;    // post-MLP residual
};

struct ForwardCache {
  std::vector<BlockCache> blocks;  // executed blocks only
  Eigen::VectorXd cls_hat;         // final-norm normalized CLS activations
  double cls_rstd = 0.0;
  Eigen::VectorXd cls_feat;        // final-norm output fed to the head
  int tokens = 0;
};

// Per-block token features for representation analysis.
struct ForwardFeatures {
  std::vector<Eigen::MatrixXd> post_attn;
  std::vector<Eigen::MatrixXd> post_mlp;
};

// Pre-norm transformer encoder; classification head reads the CLS token
// of the last executed block through the shared final normalization.
// depth_limit (when >= 0) truncates execution to that many blocks.
Eigen::VectorXd forward(const TokenSeq& tokens, const FlexiParams& params,
                        const EncoderConfig& config, int depth_limit = -1,
                        ForwardFeatures* features = nullptr,
                        ForwardCache* cache = nullptr);

// Accumulates parameter gradients; when d_tokens is non-null also returns
// the gradient with respect to the input token matrix.
void backward(const ForwardCache& cache, const FlexiParams& params,
              const EncoderConfig& config, const Eigen::VectorXd& d_logits,
              FlexiParams& grads, Eigen::MatrixXd* d_tokens = nullptr);

// embed_tokens followed by forward. Deterministic given (image, p, params).
Eigen::VectorXd flexi_forward(const Image& image, int p, const FlexiParams& params,
                              const EncoderConfig& config,
                              EmbedMethod method = EmbedMethod::kPi,
                              ResizeCache* cache = nullptr,
                              ForwardFeatures* features = nullptr);

// Forward with all intermediate state retained, plus the matching backward
// that pushes gradients through the encoder and the (constant) resize maps
// into the underlying parameters.
struct FlexiTrace {
  EmbedCache embed;
  ForwardCache encoder;
  Eigen::VectorXd logits;
};

FlexiTrace flexi_forward_trace(const Image& image, int p, const FlexiParams& params,
                               const EncoderConfig& config,
                               EmbedMethod method = EmbedMethod::kPi,
                               ResizeCache* cache = nullptr);

void flexi_backward(const FlexiTrace& trace, const FlexiParams& params,
                    const EncoderConfig& config, const Eigen::VectorXd& d_logits,
                    FlexiParams& grads);

}  // namespace flexivit
