#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "flexivit/data.hpp"
#include "flexivit/linmaps.hpp"

namespace flexivit {

// Learnable patch-embedding kernel at its underlying side length. The
// weight layout is (channels * side^2) x d: channel-major blocks, each
// block a row-major flattened side x side grid, so one spatial slice is
// resized with a single (p^2 x side^2) matrix product per channel.
struct PatchKernel {
  int side = 0;
  int channels = 1;
  Eigen::MatrixXd weights;  // (channels * side^2, d)
  Eigen::VectorXd bias;     // (d)
};

// Learnable position-embedding grid at its underlying side, plus the
// separate CLS position vector (never resized).
struct PosGrid {
  int side = 0;
  Eigen::MatrixXd grid;     // (side^2, d), row-major spatial
  Eigen::VectorXd cls_pos;  // (d)
};

// CLS token first, then the (h/p) x (w/p) patch tokens in row-major order.
struct TokenSeq {
  Eigen::MatrixXd tokens;  // (1 + s, d)
  int patch_size = 0;
  int grid_h = 0;
  int grid_w = 0;

  int seq_len() const { return grid_h * grid_w; }
};

enum class EmbedMethod { kPi, kVanilla, kNormalize };

// Memoizes the spatial resize operators; an SVD per (p_in, p_out) pair is
// too costly to recompute every training step. Not synchronized: share
// across threads only after warming, or give each thread its own.
class ResizeCache {
 public:
  // Kernel map for underlying -> p (identity when equal).
  const Eigen::MatrixXd& kernel_map(int p_in, int p_out, bool pseudo_inverse);
  // 1-D interpolation factor used for position grids and image resizing.
  const Eigen::MatrixXd& interp1d(int p_in, int p_out);

 private:
  std::map<std::tuple<int, int, bool>, Eigen::MatrixXd> kernel_maps_;
  std::map<std::pair<int, int>, Eigen::MatrixXd> line_maps_;
};

// Non-overlapping row-major tiling; throws when p does not divide both
// image sides, naming h, w and p.
std::vector<Image> patchify(const Image& image, int p);

// Inverse of patchify (used by tests and the strided consistency check).
Image unpatchify(const std::vector<Image>& patches, int grid_h, int grid_w);

// Patch matrix (s x channels*p^2) in the kernel's vectorization layout.
Eigen::MatrixXd patch_matrix(const Image& image, int p);

// Whole-image bilinear resize (separable, channels independent).
Image resize_image(const Image& image, int out_h, int out_w, ResizeCache* cache = nullptr);

// Everything the embedding backward pass needs.
struct EmbedCache {
  Eigen::MatrixXd patches;     // s x (c p^2)
  Eigen::MatrixXd kernel_map;  // p^2 x P_u^2 resize used on each kernel slice
  Eigen::MatrixXd pos_map;     // (gh*gw) x G_u^2
  Eigen::MatrixXd embeds;      // s x d, pre-normalization patch embeddings
  Eigen::VectorXd embed_norms; // s, only filled for kNormalize
  EmbedMethod method = EmbedMethod::kPi;
  int patch_size = 0;
};

// Algorithm: resize the kernel from its underlying side to p (PI by
// default, bilinear for kVanilla/kNormalize), embed each patch, resize the
// position grid bilinearly to the token grid and add it, prepend CLS.
// kNormalize additionally L2-normalizes each patch embedding before the
// position term is added.
TokenSeq embed_tokens(const Image& image, int p, const PatchKernel& kernel,
                      const PosGrid& pos, const Eigen::VectorXd& cls_token,
                      EmbedMethod method = EmbedMethod::kPi,
                      ResizeCache* cache = nullptr,
                      EmbedCache* out_cache = nullptr);

// Accumulates gradients of the embedding parameters given d(tokens).
struct EmbedGrads {
  Eigen::MatrixXd d_kernel;   // same shape as PatchKernel::weights
  Eigen::VectorXd d_bias;
  Eigen::MatrixXd d_pos;      // same shape as PosGrid::grid
  Eigen::VectorXd d_cls_pos;
  Eigen::VectorXd d_cls;
};

void embed_backward(const EmbedCache& cache, const Eigen::MatrixXd& d_tokens,
                    const PatchKernel& kernel, const PosGrid& pos,
                    EmbedGrads& grads);

// Flexible-stride alternative: keeps the patch side fixed and finds the
// minimal image resize (I, stride t) with (I - patch) / t + 1 = grid,
// searching I in [h - patch, h + patch].
struct StridedPatches {
  std::vector<Image> patches;  // grid^2 overlapping patches
  int image_side = 0;
  int stride = 0;
};

StridedPatches patchify_strided(const Image& image, int fixed_patch, int target_grid,
                                ResizeCache* cache = nullptr);

}  // namespace flexivit
