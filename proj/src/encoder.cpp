#include "flexivit/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "flexivit/rng.hpp"

namespace flexivit {

namespace {
constexpr double kLnEps = 1e-6;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Row-wise layer norm; returns the scaled output and stashes the
// normalized activations and reciprocal stddev for the backward pass.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& ln,
                           Eigen::MatrixXd& hat, Eigen::VectorXd& rstd) {
  int n = static_cast<int>(x.rows());
  int d = static_cast<int>(x.cols());
  hat.resize(n, d);
  rstd.resize(n);
  Eigen::MatrixXd out(n, d);
  for (int i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double r = 1.0 / std::sqrt(var + kLnEps);
    rstd(i) = r;
    hat.row(i) = (x.row(i).array() - mu) * r;
    out.row(i) = hat.row(i).cwiseProduct(ln.scale.transpose()) + ln.offset.transpose();
  }
  return out;
}

// d(layer_norm)/d(x) given upstream dy; also accumulates scale/offset grads.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy,
                                    const Eigen::MatrixXd& hat,
                                    const Eigen::VectorXd& rstd,
                                    const LayerNormParams& ln,
                                    LayerNormParams& dln) {
  int n = static_cast<int>(dy.rows());
  int d = static_cast<int>(dy.cols());
  dln.scale += (dy.cwiseProduct(hat)).colwise().sum().transpose();
  dln.offset += dy.colwise().sum().transpose();
  Eigen::MatrixXd dx(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd g = dy.row(i).cwiseProduct(ln.scale.transpose());
    double m1 = g.mean();
    double m2 = g.cwiseProduct(hat.row(i)).mean();
    dx.row(i) = rstd(i) * (g.array() - m1 - hat.row(i).array() * m2);
  }
  return dx;
}

void fill_truncated_normal(Eigen::Ref<Eigen::MatrixXd> m, Rng& rng, double sigma) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.truncated_normal(sigma);
}

}  // namespace

void EncoderConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("EncoderConfig: depth must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0)
    throw std::invalid_argument("EncoderConfig: width must be a positive multiple of heads");
  if (mlp_ratio < 1) throw std::invalid_argument("EncoderConfig: mlp_ratio must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("EncoderConfig: num_classes must be >= 1");
  if (underlying_patch < 1 || underlying_grid < 1)
    throw std::invalid_argument("EncoderConfig: underlying shapes must be >= 1");
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("EncoderConfig: channels must be 1 or 3");
}

FlexiParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  int d = config.width;
  int hid = config.hidden();
  int pu = config.underlying_patch;
  int gu = config.underlying_grid;

  FlexiParams p;
  p.kernel.side = pu;
  p.kernel.channels = config.channels;
  p.kernel.weights.resize(config.channels * pu * pu, d);
  p.kernel.bias = Eigen::VectorXd::Zero(d);
  p.pos.side = gu;
  p.pos.grid.resize(gu * gu, d);
  p.pos.cls_pos.resize(d);
  p.cls = Eigen::VectorXd::Zero(d);
  p.blocks.resize(config.depth);
  for (BlockParams& b : p.blocks) {
    b.ln1.scale = Eigen::VectorXd::Ones(d);
    b.ln1.offset = Eigen::VectorXd::Zero(d);
    b.ln2.scale = Eigen::VectorXd::Ones(d);
    b.ln2.offset = Eigen::VectorXd::Zero(d);
    b.wq.resize(d, d);
    b.wk.resize(d, d);
    b.wv.resize(d, d);
    b.wo.resize(d, d);
    b.bq = Eigen::VectorXd::Zero(d);
    b.bk = Eigen::VectorXd::Zero(d);
    b.bv = Eigen::VectorXd::Zero(d);
    b.bo = Eigen::VectorXd::Zero(d);
    b.w1.resize(d, hid);
    b.w2.resize(hid, d);
    b.b1 = Eigen::VectorXd::Zero(hid);
    b.b2 = Eigen::VectorXd::Zero(d);
  }
  p.final_norm.scale = Eigen::VectorXd::Ones(d);
  p.final_norm.offset = Eigen::VectorXd::Zero(d);
  p.head_w = Eigen::MatrixXd::Zero(d, config.num_classes);
  p.head_b = Eigen::VectorXd::Zero(config.num_classes);

  Rng root(seed, /*stream=*/0x1417);
  std::uint64_t tag = 0;
  Rng kr = root.fork(tag++);
  fill_truncated_normal(p.kernel.weights, kr, 0.02);
  Rng pr = root.fork(tag++);
  for (Eigen::Index c = 0; c < p.pos.grid.cols(); ++c)
    for (Eigen::Index r = 0; r < p.pos.grid.rows(); ++r) p.pos.grid(r, c) = pr.normal() * 0.02;
  for (Eigen::Index i = 0; i < d; ++i) p.pos.cls_pos(i) = pr.normal() * 0.02;
  for (BlockParams& b : p.blocks) {
    for (Eigen::MatrixXd* w : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) {
      Rng wr = root.fork(tag++);
      fill_truncated_normal(*w, wr, 1.0 / std::sqrt(static_cast<double>(w->rows())));
    }
  }
  return p;
}

FlexiParams zeros_like(const FlexiParams& params) {
  FlexiParams z = params;
  for (TensorView& t : tensor_views(z))
    std::fill(t.data, t.data + t.size, 0.0);
  return z;
}

std::vector<TensorView> tensor_views(FlexiParams& p) {
  std::vector<TensorView> views;
  auto add_mat = [&](std::string name, Eigen::MatrixXd& m, std::vector<std::uint32_t> dims) {
    views.push_back({std::move(name), m.data(), static_cast<std::size_t>(m.size()),
                     std::move(dims)});
  };
  auto add_vec = [&](std::string name, Eigen::VectorXd& v) {
    views.push_back({std::move(name), v.data(), static_cast<std::size_t>(v.size()),
                     {static_cast<std::uint32_t>(v.size())}});
  };
  std::uint32_t d = static_cast<std::uint32_t>(p.kernel.weights.cols());
  add_mat("kernel", p.kernel.weights,
          {static_cast<std::uint32_t>(p.kernel.channels),
           static_cast<std::uint32_t>(p.kernel.side),
           static_cast<std::uint32_t>(p.kernel.side), d});
  add_vec("kernel_bias", p.kernel.bias);
  add_mat("pos", p.pos.grid,
          {static_cast<std::uint32_t>(p.pos.side), static_cast<std::uint32_t>(p.pos.side), d});
  add_vec("cls_pos", p.pos.cls_pos);
  add_vec("cls", p.cls);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    BlockParams& b = p.blocks[i];
    std::string pre = "block" + std::to_string(i) + ".";
    add_vec(pre + "ln1.scale", b.ln1.scale);
    add_vec(pre + "ln1.offset", b.ln1.offset);
    std::uint32_t w = static_cast<std::uint32_t>(b.wq.rows());
    std::uint32_t hid = static_cast<std::uint32_t>(b.w1.cols());
    add_mat(pre + "attn.wq", b.wq, {w, w});
    add_vec(pre + "attn.bq", b.bq);
    add_mat(pre + "attn.wk", b.wk, {w, w});
    add_vec(pre + "attn.bk", b.bk);
    add_mat(pre + "attn.wv", b.wv, {w, w});
    add_vec(pre + "attn.bv", b.bv);
    add_mat(pre + "attn.wo", b.wo, {w, w});
    add_vec(pre + "attn.bo", b.bo);
    add_vec(pre + "ln2.scale", b.ln2.scale);
    add_vec(pre + "ln2.offset", b.ln2.offset);
    add_mat(pre + "mlp.w1", b.w1, {w, hid});
    add_vec(pre + "mlp.b1", b.b1);
    add_mat(pre + "mlp.w2", b.w2, {hid, w});
    add_vec(pre + "mlp.b2", b.b2);
  }
  add_vec("final_norm.scale", p.final_norm.scale);
  add_vec("final_norm.offset", p.final_norm.offset);
  add_mat("head.w", p.head_w,
          {static_cast<std::uint32_t>(p.head_w.rows()),
           static_cast<std::uint32_t>(p.head_w.cols())});
  add_vec("head.b", p.head_b);
  return views;
}

double param_squared_norm(FlexiParams& params) {
  double total = 0.0;
  for (TensorView& t : tensor_views(params))
    for (std::size_t i = 0; i < t.size; ++i) total += t.data[i] * t.data[i];
  return total;
}

Eigen::VectorXd forward(const TokenSeq& tokens, const FlexiParams& params,
                        const EncoderConfig& config, int depth_limit,
                        ForwardFeatures* features, ForwardCache* cache) {
  config.validate();
  if (tokens.tokens.cols() != config.width)
    throw std::invalid_argument("forward: token dim does not match width");
  if (tokens.seq_len() < 1)
    throw std::invalid_argument("forward: token grid must be at least 1x1");
  int depth = depth_limit < 0 ? config.depth : depth_limit;
  if (depth < 1 || depth > config.depth)
    throw std::invalid_argument("forward: depth_limit out of range");

  int t = static_cast<int>(tokens.tokens.rows());
  int d = config.width;
  int heads = config.heads;
  int dh = config.head_dim();
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.blocks.assign(depth, {});
  fc.tokens = t;
  if (features) {
    features->post_attn.clear();
    features->post_mlp.clear();
  }

  Eigen::MatrixXd x = tokens.tokens;
  for (int b = 0; b < depth; ++b) {
    const BlockParams& bp = params.blocks[b];
    BlockCache& bc = fc.blocks[b];
    bc.x_in = x;
    bc.ln1_out = layer_norm(x, bp.ln1, bc.ln1_hat, bc.ln1_rstd);

    bc.q = bc.ln1_out * bp.wq;
    bc.q.rowwise() += bp.bq.transpose();
    bc.k = bc.ln1_out * bp.wk;
    bc.k.rowwise() += bp.bk.transpose();
    bc.v = bc.ln1_out * bp.wv;
    bc.v.rowwise() += bp.bv.transpose();

    bc.attn.assign(heads, {});
    bc.attn_concat.resize(t, d);
    for (int h = 0; h < heads; ++h) {
      Eigen::MatrixXd scores =
          (bc.q.middleCols(h * dh, dh) * bc.k.middleCols(h * dh, dh).transpose()) * scale;
      for (int i = 0; i < t; ++i) {
        double mx = scores.row(i).maxCoeff();
        Eigen::ArrayXd e = (scores.row(i).array() - mx).exp();
        scores.row(i) = e / e.sum();
      }
      bc.attn[h] = std::move(scores);
      bc.attn_concat.middleCols(h * dh, dh) = bc.attn[h] * bc.v.middleCols(h * dh, dh);
    }

    bc.x_mid = x + bc.attn_concat * bp.wo;
    bc.x_mid.rowwise() += bp.bo.transpose();
    if (features) features->post_attn.push_back(bc.x_mid);

    bc.ln2_out = layer_norm(bc.x_mid, bp.ln2, bc.ln2_hat, bc.ln2_rstd);
    bc.mlp_pre = bc.ln2_out * bp.w1;
    bc.mlp_pre.rowwise() += bp.b1.transpose();
    bc.mlp_act = bc.mlp_pre.unaryExpr([](double z) { return gelu(z); });
    bc.x_out = bc.x_mid + bc.mlp_act * bp.w2;
    bc.x_out.rowwise() += bp.b2.transpose();
    if (features) features->post_mlp.push_back(bc.x_out);
    x = bc.x_out;
  }

  // Shared final normalization on the CLS token, then the linear head.
  Eigen::VectorXd cls = x.row(0).transpose();
  double mu = cls.mean();
  double var = (cls.array() - mu).square().mean();
  double rstd = 1.0 / std::sqrt(var + kLnEps);
  fc.cls_hat = (cls.array() - mu) * rstd;
  fc.cls_rstd = rstd;
  fc.cls_feat = fc.cls_hat.cwiseProduct(params.final_norm.scale) + params.final_norm.offset;

  return params.head_w.transpose() * fc.cls_feat + params.head_b;
}

void backward(const ForwardCache& fc, const FlexiParams& params,
              const EncoderConfig& config, const Eigen::VectorXd& d_logits,
              FlexiParams& grads, Eigen::MatrixXd* d_tokens) {
  int depth = static_cast<int>(fc.blocks.size());
  int t = fc.tokens;
  int d = config.width;
  int heads = config.heads;
  int dh = config.head_dim();
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grads.head_w += fc.cls_feat * d_logits.transpose();
  grads.head_b += d_logits;
  Eigen::VectorXd d_feat = params.head_w * d_logits;

  grads.final_norm.scale += d_feat.cwiseProduct(fc.cls_hat);
  grads.final_norm.offset += d_feat;
  Eigen::VectorXd g = d_feat.cwiseProduct(params.final_norm.scale);
  double m1 = g.mean();
  double m2 = g.cwiseProduct(fc.cls_hat).mean();
  Eigen::VectorXd d_cls = fc.cls_rstd * (g.array() - m1 - fc.cls_hat.array() * m2);

  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(t, d);
  dx.row(0) = d_cls.transpose();

  for (int b = depth - 1; b >= 0; --b) {
    const BlockParams& bp = params.blocks[b];
    const BlockCache& bc = fc.blocks[b];
    BlockParams& gb = grads.blocks[b];

    // MLP sublayer.
    Eigen::MatrixXd d_mlp_out = dx;  // residual: dx flows to both branches
    gb.w2 += bc.mlp_act.transpose() * d_mlp_out;
    gb.b2 += d_mlp_out.colwise().sum().transpose();
    Eigen::MatrixXd d_act = d_mlp_out * bp.w2.transpose();
    Eigen::MatrixXd d_pre =
        d_act.cwiseProduct(bc.mlp_pre.unaryExpr([](double z) { return gelu_grad(z); }));
    gb.w1 += bc.ln2_out.transpose() * d_pre;
    gb.b1 += d_pre.colwise().sum().transpose();
    Eigen::MatrixXd d_ln2_out = d_pre * bp.w1.transpose();
    Eigen::MatrixXd d_x_mid =
        dx + layer_norm_backward(d_ln2_out, bc.ln2_hat, bc.ln2_rstd, bp.ln2, gb.ln2);

    // Attention sublayer.
    Eigen::MatrixXd d_attn_out = d_x_mid;
    gb.wo += bc.attn_concat.transpose() * d_attn_out;
    gb.bo += d_attn_out.colwise().sum().transpose();
    Eigen::MatrixXd d_concat = d_attn_out * bp.wo.transpose();

    Eigen::MatrixXd dq(t, d), dk(t, d), dv(t, d);
    for (int h = 0; h < heads; ++h) {
      const Eigen::MatrixXd& a = bc.attn[h];
      Eigen::MatrixXd d_ah = d_concat.middleCols(h * dh, dh);
      Eigen::MatrixXd d_a = d_ah * bc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * d_ah;
      // Softmax rows: ds = a .* (da - rowsum(da .* a)).
      Eigen::VectorXd row_dot = (d_a.cwiseProduct(a)).rowwise().sum();
      Eigen::MatrixXd d_s = a.cwiseProduct(d_a.colwise() - row_dot);
      d_s *= scale;
      dq.middleCols(h * dh, dh) = d_s * bc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = d_s.transpose() * bc.q.middleCols(h * dh, dh);
    }

    gb.wq += bc.ln1_out.transpose() * dq;
    gb.bq += dq.colwise().sum().transpose();
    gb.wk += bc.ln1_out.transpose() * dk;
    gb.bk += dk.colwise().sum().transpose();
    gb.wv += bc.ln1_out.transpose() * dv;
    gb.bv += dv.colwise().sum().transpose();
    Eigen::MatrixXd d_ln1_out =
        dq * bp.wq.transpose() + dk * bp.wk.transpose() + dv * bp.wv.transpose();
    dx = d_x_mid + layer_norm_backward(d_ln1_out, bc.ln1_hat, bc.ln1_rstd, bp.ln1, gb.ln1);
  }

  if (d_tokens) *d_tokens = dx;
}

Eigen::VectorXd flexi_forward(const Image& image, int p, const FlexiParams& params,
                              const EncoderConfig& config, EmbedMethod method,
                              ResizeCache* cache, ForwardFeatures* features) {
  TokenSeq seq = embed_tokens(image, p, params.kernel, params.pos, params.cls, method, cache);
  return forward(seq, params, config, -1, features);
}

FlexiTrace flexi_forward_trace(const Image& image, int p, const FlexiParams& params,
                               const EncoderConfig& config, EmbedMethod method,
                               ResizeCache* cache) {
  FlexiTrace trace;
  TokenSeq seq = embed_tokens(image, p, params.kernel, params.pos, params.cls, method,
                              cache, &trace.embed);
  trace.logits = forward(seq, params, config, -1, nullptr, &trace.encoder);
  return trace;
}

void flexi_backward(const FlexiTrace& trace, const FlexiParams& params,
                    const EncoderConfig& config, const Eigen::VectorXd& d_logits,
                    FlexiParams& grads) {
  Eigen::MatrixXd d_tokens;
  backward(trace.encoder, params, config, d_logits, grads, &d_tokens);
  EmbedGrads eg{grads.kernel.weights, grads.kernel.bias, grads.pos.grid,
                grads.pos.cls_pos, grads.cls};
  embed_backward(trace.embed, d_tokens, params.kernel, params.pos, eg);
  grads.kernel.weights = std::move(eg.d_kernel);
  grads.kernel.bias = std::move(eg.d_bias);
  grads.pos.grid = std::move(eg.d_pos);
  grads.pos.cls_pos = std::move(eg.d_cls_pos);
  grads.cls = std::move(eg.d_cls);
}

}  // namespace flexivit
