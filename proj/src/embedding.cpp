#include "flexivit/embedding.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flexivit {

const Eigen::MatrixXd& ResizeCache::kernel_map(int p_in, int p_out, bool pi) {
  auto key = std::make_tuple(p_in, p_out, pi);
  auto it = kernel_maps_.find(key);
  if (it != kernel_maps_.end()) return it->second;
  Eigen::MatrixXd m;
  if (p_in == p_out)
    m = Eigen::MatrixXd::Identity(p_in * p_in, p_in * p_in);
  else if (pi)
    m = pi_resize_matrix(p_in, p_out).weights;
  else
    m = bilinear_matrix(p_in, p_out).weights;
  return kernel_maps_.emplace(key, std::move(m)).first->second;
}

const Eigen::MatrixXd& ResizeCache::interp1d(int p_in, int p_out) {
  auto key = std::make_pair(p_in, p_out);
  auto it = line_maps_.find(key);
  if (it != line_maps_.end()) return it->second;
  return line_maps_.emplace(key, interp1d_matrix(p_in, p_out)).first->second;
}

static void check_tiling(const Image& image, int p) {
  if (p < 1) throw std::invalid_argument("patchify: patch size must be >= 1");
  if (image.h % p != 0 || image.w % p != 0)
    throw std::invalid_argument(
        "patchify: image " + std::to_string(image.h) + "x" +
        std::to_string(image.w) + " is not perfectly tiled by patch size " +
        std::to_string(p));
}

std::vector<Image> patchify(const Image& image, int p) {
  check_tiling(image, p);
  int gh = image.h / p;
  int gw = image.w / p;
  std::vector<Image> patches;
  patches.reserve(static_cast<std::size_t>(gh) * gw);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      Image patch;
      patch.h = patch.w = p;
      patch.c = image.c;
      patch.v.resize(static_cast<std::size_t>(p) * p * image.c);
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int ch = 0; ch < image.c; ++ch)
            patch.at(y, x, ch) = image.at(gy * p + y, gx * p + x, ch);
      patches.push_back(std::move(patch));
    }
  }
  return patches;
}

Image unpatchify(const std::vector<Image>& patches, int grid_h, int grid_w) {
  if (patches.empty() || grid_h * grid_w != static_cast<int>(patches.size()))
    throw std::invalid_argument("unpatchify: grid does not match patch count");
  int p = patches[0].h;
  int c = patches[0].c;
  Image img;
  img.h = grid_h * p;
  img.w = grid_w * p;
  img.c = c;
  img.v.resize(static_cast<std::size_t>(img.h) * img.w * c);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      const Image& patch = patches[gy * grid_w + gx];
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int ch = 0; ch < c; ++ch)
            img.at(gy * p + y, gx * p + x, ch) = patch.at(y, x, ch);
    }
  return img;
}

Eigen::MatrixXd patch_matrix(const Image& image, int p) {
  check_tiling(image, p);
  int gh = image.h / p;
  int gw = image.w / p;
  int s = gh * gw;
  Eigen::MatrixXd m(s, image.c * p * p);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      int row = gy * gw + gx;
      for (int ch = 0; ch < image.c; ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            m(row, ch * p * p + y * p + x) = image.at(gy * p + y, gx * p + x, ch);
    }
  return m;
}

Image resize_image(const Image& image, int out_h, int out_w, ResizeCache* cache) {
  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  const Eigen::MatrixXd& rv = rc.interp1d(image.h, out_h);
  const Eigen::MatrixXd& rh = rc.interp1d(image.w, out_w);

  Image out;
  out.h = out_h;
  out.w = out_w;
  out.c = image.c;
  out.v.resize(static_cast<std::size_t>(out_h) * out_w * image.c);
  Eigen::MatrixXd plane(image.h, image.w);
  for (int ch = 0; ch < image.c; ++ch) {
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x) plane(y, x) = image.at(y, x, ch);
    Eigen::MatrixXd resized = rv * plane * rh.transpose();
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(y, x, ch) = resized(y, x);
  }
  return out;
}

TokenSeq embed_tokens(const Image& image, int p, const PatchKernel& kernel,
                      const PosGrid& pos, const Eigen::VectorXd& cls_token,
                      EmbedMethod method, ResizeCache* cache,
                      EmbedCache* out_cache) {
  check_tiling(image, p);
  if (image.c != kernel.channels)
    throw std::invalid_argument("embed_tokens: image channels do not match kernel");
  int gh = image.h / p;
  int gw = image.w / p;
  int s = gh * gw;
  int d = static_cast<int>(kernel.weights.cols());

  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  bool pi = (method == EmbedMethod::kPi);
  const Eigen::MatrixXd& kmap = rc.kernel_map(kernel.side, p, pi);

  // Resize each channel slice of the kernel independently.
  Eigen::MatrixXd resized(image.c * p * p, d);
  for (int ch = 0; ch < image.c; ++ch)
    resized.middleRows(ch * p * p, p * p) =
        kmap * kernel.weights.middleRows(ch * kernel.side * kernel.side,
                                         kernel.side * kernel.side);

  Eigen::MatrixXd patches = patch_matrix(image, p);
  Eigen::MatrixXd embeds = patches * resized;
  embeds.rowwise() += kernel.bias.transpose();

  Eigen::VectorXd norms;
  if (method == EmbedMethod::kNormalize) {
    norms = embeds.rowwise().norm();
    for (int i = 0; i < s; ++i)
      if (norms(i) > 0.0) embeds.row(i) /= norms(i);
  }

  // Bilinear position-grid resize, anisotropic for non-square grids.
  const Eigen::MatrixXd& pv = rc.interp1d(pos.side, gh);
  const Eigen::MatrixXd& ph = rc.interp1d(pos.side, gw);
  Eigen::MatrixXd pos_map(s, pos.side * pos.side);
  for (int r = 0; r < gh; ++r)
    for (int c2 = 0; c2 < gw; ++c2)
      for (int i = 0; i < pos.side; ++i)
        for (int j = 0; j < pos.side; ++j)
          pos_map(r * gw + c2, i * pos.side + j) = pv(r, i) * ph(c2, j);

  TokenSeq seq;
  seq.patch_size = p;
  seq.grid_h = gh;
  seq.grid_w = gw;
  seq.tokens.resize(1 + s, d);
  seq.tokens.row(0) = (cls_token + pos.cls_pos).transpose();
  seq.tokens.bottomRows(s) = embeds + pos_map * pos.grid;

  if (out_cache) {
    out_cache->patches = std::move(patches);
    out_cache->kernel_map = kmap;
    out_cache->pos_map = std::move(pos_map);
    out_cache->embeds = std::move(embeds);
    out_cache->embed_norms = std::move(norms);
    out_cache->method = method;
    out_cache->patch_size = p;
  }
  return seq;
}

void embed_backward(const EmbedCache& cache, const Eigen::MatrixXd& d_tokens,
                    const PatchKernel& kernel, const PosGrid& pos,
                    EmbedGrads& grads) {
  int s = static_cast<int>(cache.patches.rows());
  int p = cache.patch_size;
  if (d_tokens.rows() != 1 + s)
    throw std::invalid_argument("embed_backward: token gradient shape mismatch");

  grads.d_cls += d_tokens.row(0).transpose();
  grads.d_cls_pos += d_tokens.row(0).transpose();

  Eigen::MatrixXd d_patch_tokens = d_tokens.bottomRows(s);
  grads.d_pos += cache.pos_map.transpose() * d_patch_tokens;

  Eigen::MatrixXd d_embeds = d_patch_tokens;
  if (cache.method == EmbedMethod::kNormalize) {
    // d(e/||e||) = (g - (g . e_hat) e_hat) / ||e||, zero rows left alone.
    for (int i = 0; i < s; ++i) {
      double n = cache.embed_norms(i);
      if (n > 0.0) {
        Eigen::RowVectorXd ehat = cache.embeds.row(i);  // already normalized
        double dot = d_patch_tokens.row(i).dot(ehat);
        d_embeds.row(i) = (d_patch_tokens.row(i) - dot * ehat) / n;
      } else {
        d_embeds.row(i).setZero();
      }
    }
  }

  grads.d_bias += d_embeds.colwise().sum().transpose();
  Eigen::MatrixXd d_resized = cache.patches.transpose() * d_embeds;
  int pu = kernel.side;
  for (int ch = 0; ch < kernel.channels; ++ch)
    grads.d_kernel.middleRows(ch * pu * pu, pu * pu) +=
        cache.kernel_map.transpose() * d_resized.middleRows(ch * p * p, p * p);
}

StridedPatches patchify_strided(const Image& image, int fixed_patch, int target_grid,
                                ResizeCache* cache) {
  if (target_grid < 1)
    throw std::invalid_argument("patchify_strided: target grid must be >= 1");
  if (image.h != image.w)
    throw std::invalid_argument("patchify_strided: only square images supported");
  int h = image.h;

  // I = fixed_patch + (g - 1) * t; pick integer t minimizing |I - h| within
  // the search window, preferring the smaller stride on ties.
  int best_stride = -1;
  int best_side = -1;
  long best_err = -1;
  if (target_grid == 1) {
    best_stride = fixed_patch;  // degenerate: single patch, stride unused
    best_side = fixed_patch;
    best_err = std::abs(static_cast<long>(fixed_patch) - h);
    if (best_side < h - fixed_patch || best_side > h + fixed_patch) best_stride = -1;
  } else {
    for (int t = 1; t <= h + fixed_patch; ++t) {
      long side = fixed_patch + static_cast<long>(target_grid - 1) * t;
      if (side < h - fixed_patch || side > h + fixed_patch) continue;
      long err = std::abs(side - h);
      if (best_stride < 0 || err < best_err) {
        best_stride = t;
        best_side = static_cast<int>(side);
        best_err = err;
      }
    }
  }
  if (best_stride < 0)
    throw std::invalid_argument(
        "patchify_strided: no feasible (image size, stride) for grid " +
        std::to_string(target_grid) + " within [" + std::to_string(h - fixed_patch) +
        ", " + std::to_string(h + fixed_patch) + "]");

  Image resized = (best_side == h) ? image : resize_image(image, best_side, best_side, cache);

  StridedPatches out;
  out.image_side = best_side;
  out.stride = best_stride;
  out.patches.reserve(static_cast<std::size_t>(target_grid) * target_grid);
  for (int gy = 0; gy < target_grid; ++gy)
    for (int gx = 0; gx < target_grid; ++gx) {
      Image patch;
      patch.h = patch.w = fixed_patch;
      patch.c = image.c;
      patch.v.resize(static_cast<std::size_t>(fixed_patch) * fixed_patch * image.c);
      for (int y = 0; y < fixed_patch; ++y)
        for (int x = 0; x < fixed_patch; ++x)
          for (int ch = 0; ch < image.c; ++ch)
            patch.at(y, x, ch) =
                resized.at(gy * best_stride + y, gx * best_stride + x, ch);
      out.patches.push_back(std::move(patch));
    }
  return out;
}

}  // namespace flexivit
