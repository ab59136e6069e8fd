#include "flexivit/analyze.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "flexivit/train.hpp"

namespace flexivit {

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows())
    throw std::invalid_argument("linear_cka: row counts differ");
  if (x.rows() < 2) throw std::invalid_argument("linear_cka: need at least 2 rows");
  Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  double cross = (yc.transpose() * xc).squaredNorm();
  double xx = (xc.transpose() * xc).norm();
  double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0)
    throw std::invalid_argument("linear_cka: zero-variance features");
  return cross / (xx * yy);
}

namespace {

// Unbiased HSIC estimator (Song et al.) on gram matrices with zeroed
// diagonals; requires n >= 4.
double hsic_unbiased(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
  int n = static_cast<int>(k.rows());
  Eigen::MatrixXd kt = k;
  Eigen::MatrixXd lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();
  double tr = (kt.cwiseProduct(lt)).sum();
  double sk = kt.sum();
  double sl = lt.sum();
  Eigen::VectorXd krow = kt.rowwise().sum();
  Eigen::VectorXd lrow = lt.rowwise().sum();
  double cross = krow.dot(lrow);
  double nn = n;
  return (tr + sk * sl / ((nn - 1.0) * (nn - 2.0)) - 2.0 * cross / (nn - 2.0)) /
         (nn * (nn - 3.0));
}

}  // namespace

double minibatch_linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            int batch_size) {
  if (x.rows() != y.rows())
    throw std::invalid_argument("minibatch_linear_cka: row counts differ");
  int n = static_cast<int>(x.rows());
  batch_size = std::min<int>(batch_size, n);
  if (batch_size < 4)
    throw std::invalid_argument("minibatch_linear_cka: need batches of at least 4 rows");

  double xy = 0.0, xx = 0.0, yy = 0.0;
  int batches = 0;
  for (int start = 0; start + batch_size <= n; start += batch_size) {
    Eigen::MatrixXd xb = x.middleRows(start, batch_size);
    Eigen::MatrixXd yb = y.middleRows(start, batch_size);
    Eigen::MatrixXd k = xb * xb.transpose();
    Eigen::MatrixXd l = yb * yb.transpose();
    xy += hsic_unbiased(k, l);
    xx += hsic_unbiased(k, k);
    yy += hsic_unbiased(l, l);
    ++batches;
  }
  if (batches == 0) throw std::invalid_argument("minibatch_linear_cka: no full batch");
  double denom = std::sqrt((xx / batches) * (yy / batches));
  if (denom == 0.0)
    throw std::invalid_argument("minibatch_linear_cka: zero-variance features");
  return (xy / batches) / denom;
}

double arccos_distance(double similarity) {
  constexpr double kSlack = 1e-9;
  if (similarity < -kSlack || similarity > 1.0 + kSlack)
    throw std::invalid_argument("arccos_distance: similarity " +
                                std::to_string(similarity) + " outside [0, 1]");
  return std::acos(std::clamp(similarity, 0.0, 1.0));
}

namespace {

const Eigen::MatrixXd& block_features(const ForwardFeatures& f, int block, Sublayer s) {
  return s == Sublayer::kAttn ? f.post_attn.at(block) : f.post_mlp.at(block);
}

}  // namespace

CosineMap token_cosine_map(const FlexiParams& params, const EncoderConfig& config,
                           const ShapeDataset& data, int block, Sublayer sublayer,
                           int seed_size, int target_size, ResizeCache* cache) {
  if (block < 0 || block >= config.depth)
    throw std::invalid_argument("token_cosine_map: block out of range");
  if (data.side % seed_size != 0 || data.side % target_size != 0)
    throw std::invalid_argument("token_cosine_map: sizes must tile the image side");

  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  int gp = data.side / seed_size;
  int gq = data.side / target_size;
  int seed = center_seed_index(gp);
  int seed_flat = seed * gp + seed;

  CosineMap out;
  out.grid = Eigen::MatrixXd::Zero(gq, gq);
  out.seed_row = seed;
  for (const Image& img : data.images) {
    ForwardFeatures fp, fq;
    flexi_forward(img, seed_size, params, config, EmbedMethod::kPi, &rc, &fp);
    if (target_size == seed_size)
      fq = fp;
    else
      flexi_forward(img, target_size, params, config, EmbedMethod::kPi, &rc, &fq);
    const Eigen::MatrixXd& reps_p = block_features(fp, block, sublayer);
    const Eigen::MatrixXd& reps_q = block_features(fq, block, sublayer);

    Eigen::RowVectorXd seed_rep = reps_p.row(1 + seed_flat);
    double seed_norm = seed_rep.norm();
    for (int r = 0; r < gq; ++r) {
      for (int c = 0; c < gq; ++c) {
        Eigen::RowVectorXd tok = reps_q.row(1 + r * gq + c);
        double denom = seed_norm * tok.norm();
        if (denom == 0.0) {
          ++out.warnings;
          continue;
        }
        out.grid(r, c) += seed_rep.dot(tok) / denom;
      }
    }
  }
  out.grid /= static_cast<double>(data.images.size());
  return out;
}

Eigen::VectorXi predictions(const Eigen::MatrixXd& logits) {
  Eigen::VectorXi preds(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    preds(i) = static_cast<int>(arg);
  }
  return preds;
}

Eigen::VectorXi ensemble_predict(const std::vector<Eigen::MatrixXd>& logit_sets) {
  if (logit_sets.empty())
    throw std::invalid_argument("ensemble_predict: no logit sets");
  Eigen::MatrixXd mean = logit_sets[0];
  for (std::size_t i = 1; i < logit_sets.size(); ++i) {
    if (logit_sets[i].rows() != mean.rows() || logit_sets[i].cols() != mean.cols())
      throw std::invalid_argument("ensemble_predict: logit shapes differ");
    mean += logit_sets[i];
  }
  mean /= static_cast<double>(logit_sets.size());
  return predictions(mean);
}

double agreement(const Eigen::VectorXi& a, const Eigen::VectorXi& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("agreement: prediction lengths differ");
  if (a.size() == 0) throw std::invalid_argument("agreement: empty predictions");
  int same = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) == b(i)) ++same;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

FlopsBreakdown flops_estimate(const EncoderConfig& config, long long seq_len,
                              int patch_size, int depth_limit) {
  if (seq_len < 1) throw std::invalid_argument("flops_estimate: seq_len must be >= 1");
  int depth = depth_limit < 0 ? config.depth : depth_limit;
  double s = static_cast<double>(seq_len);
  double d = config.width;
  FlopsBreakdown f;
  f.embed = s * static_cast<double>(patch_size) * patch_size * config.channels * d;
  f.attn_linear = depth * 4.0 * s * d * d;
  f.attn_quadratic = depth * 2.0 * s * s * d;
  f.mlp = depth * 2.0 * s * d * (static_cast<double>(config.mlp_ratio) * d) * 2.0;
  return f;
}

double expected_flops(const EncoderConfig& config, const PatchSizeDistribution& dist,
                      int image_side) {
  dist.validate_for_side(image_side);
  double total_w = 0.0;
  for (double w : dist.weights) total_w += w;
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.sizes.size(); ++i) {
    int g = image_side / dist.sizes[i];
    long long s = static_cast<long long>(g) * g;
    acc += dist.weights[i] / total_w * flops_estimate(config, s, dist.sizes[i]).total();
  }
  return acc;
}

std::vector<SweepRow> eval_sweep(const FlexiParams& params, const EncoderConfig& config,
                                 const ShapeDataset& data, const std::vector<int>& sizes,
                                 ResizeCache* cache) {
  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  std::vector<SweepRow> rows;
  for (int p : sizes) {
    if (data.side % p != 0)
      throw std::invalid_argument("eval_sweep: size " + std::to_string(p) +
                                  " does not tile image side " + std::to_string(data.side));
    int g = data.side / p;
    SweepRow row;
    row.patch_size = p;
    row.seq_len = static_cast<long long>(g) * g;
    row.accuracy = evaluate_accuracy(params, config, data, p, &rc);
    row.gflops = flops_estimate(config, row.seq_len, p).total() / 1e9;
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd dataset_logits(const FlexiParams& params, const EncoderConfig& config,
                               const ShapeDataset& data, int patch_size,
                               ResizeCache* cache) {
  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  Eigen::MatrixXd logits(data.images.size(), config.num_classes);
  for (std::size_t i = 0; i < data.images.size(); ++i)
    logits.row(i) =
        flexi_forward(data.images[i], patch_size, params, config, EmbedMethod::kPi, &rc)
            .transpose();
  return logits;
}

FeatureMatrix dataset_features(const FlexiParams& params, const EncoderConfig& config,
                               const ShapeDataset& data, int block, Sublayer sublayer,
                               int patch_size, ResizeCache* cache) {
  if (block < 0 || block >= config.depth)
    throw std::invalid_argument("dataset_features: block out of range");
  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  FeatureMatrix out;
  out.tag = {block, sublayer, patch_size};
  out.values.resize(data.images.size(), config.width);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    ForwardFeatures f;
    flexi_forward(data.images[i], patch_size, params, config, EmbedMethod::kPi, &rc, &f);
    const Eigen::MatrixXd& reps = block_features(f, block, sublayer);
    // Mean over patch tokens (CLS excluded) so feature rows are comparable
    // across grid sizes.
    out.values.row(i) = reps.bottomRows(reps.rows() - 1).colwise().mean();
  }
  return out;
}

}  // namespace flexivit
