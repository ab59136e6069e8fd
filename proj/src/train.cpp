#include "flexivit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace flexivit {

namespace {

// log(sum(exp(x))) with max-shift.
double logsumexp(const Eigen::VectorXd& x) {
  double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

}  // namespace

PatchSizeDistribution PatchSizeDistribution::uniform(std::vector<int> sizes) {
  PatchSizeDistribution d;
  d.sizes = std::move(sizes);
  d.weights.assign(d.sizes.size(), 1.0);
  d.validate();
  return d;
}

PatchSizeDistribution PatchSizeDistribution::single(int size) {
  return uniform({size});
}

void PatchSizeDistribution::validate() const {
  if (sizes.empty()) throw std::invalid_argument("PatchSizeDistribution: empty");
  if (sizes.size() != weights.size())
    throw std::invalid_argument("PatchSizeDistribution: sizes/weights length mismatch");
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    inc &= sizes[i] > sizes[i - 1];
    dec &= sizes[i] < sizes[i - 1];
  }
  if (!inc && !dec)
    throw std::invalid_argument("PatchSizeDistribution: sizes must be strictly monotone");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("PatchSizeDistribution: negative weight");
    total += w;
  }
  if (total <= 0.0)
    throw std::invalid_argument("PatchSizeDistribution: all weights are zero");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("PatchSizeDistribution: size must be >= 1");
}

void PatchSizeDistribution::validate_for_side(int image_side) const {
  validate();
  for (int s : sizes)
    if (image_side % s != 0)
      throw std::invalid_argument("patch size " + std::to_string(s) +
                                  " does not tile image side " +
                                  std::to_string(image_side));
}

PatchSizeDistribution triangular_distribution(std::vector<int> sizes) {
  if (sizes.empty()) throw std::invalid_argument("triangular_distribution: empty");
  PatchSizeDistribution d;
  d.sizes = std::move(sizes);
  d.weights.reserve(d.sizes.size());
  for (int s : d.sizes) d.weights.push_back(s >= 16 && s <= 30 ? 3.0 : 1.0);
  d.validate();
  return d;
}

int sample_patch_size(const PatchSizeDistribution& dist, Rng& rng) {
  dist.validate();
  return dist.sizes[rng.weighted_index(dist.weights)];
}

void Curriculum::validate() const {
  large_dist.validate();
  target_dist.validate();
  if (schedule_fraction < 0.0 || schedule_fraction > 1.0 || ramp_fraction < 0.0 ||
      ramp_fraction > 1.0)
    throw std::invalid_argument("Curriculum: fractions must lie in [0, 1]");
  if (total_steps < 1) throw std::invalid_argument("Curriculum: total_steps must be >= 1");
}

long long Curriculum::phase_steps() const {
  return std::llround(schedule_fraction * static_cast<double>(total_steps));
}

long long Curriculum::ramp_steps() const {
  return std::llround(ramp_fraction * (1.0 - schedule_fraction) *
                      static_cast<double>(total_steps));
}

PatchSizeDistribution curriculum_distribution(const Curriculum& cur, long long step) {
  cur.validate();
  if (step < 0 || step >= cur.total_steps)
    throw std::invalid_argument("curriculum_distribution: step out of range");
  long long pure = cur.phase_steps();
  long long ramp = cur.ramp_steps();
  if (step < pure) return cur.large_dist;
  if (step >= pure + ramp) return cur.target_dist;

  // Linear ramp: mix the normalized weights over the union of sizes.
  double x = static_cast<double>(step - pure) / static_cast<double>(ramp);
  auto normalized = [](const PatchSizeDistribution& d) {
    double total = 0.0;
    for (double w : d.weights) total += w;
    std::vector<double> out(d.weights);
    for (double& w : out) w /= total;
    return out;
  };
  std::vector<double> wl = normalized(cur.large_dist);
  std::vector<double> wt = normalized(cur.target_dist);

  std::vector<int> sizes;
  for (int s : cur.large_dist.sizes) sizes.push_back(s);
  for (int s : cur.target_dist.sizes)
    if (std::find(sizes.begin(), sizes.end(), s) == sizes.end()) sizes.push_back(s);
  std::sort(sizes.begin(), sizes.end(), std::greater<int>());

  PatchSizeDistribution mix;
  mix.sizes = sizes;
  mix.weights.assign(sizes.size(), 0.0);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (std::size_t j = 0; j < cur.large_dist.sizes.size(); ++j)
      if (cur.large_dist.sizes[j] == sizes[i]) mix.weights[i] += (1.0 - x) * wl[j];
    for (std::size_t j = 0; j < cur.target_dist.sizes.size(); ++j)
      if (cur.target_dist.sizes[j] == sizes[i]) mix.weights[i] += x * wt[j];
  }
  mix.validate();
  return mix;
}

double supervised_loss(const Eigen::VectorXd& logits, int label,
                       Eigen::VectorXd* d_logits) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("supervised_loss: label out of range");
  double lse = logsumexp(logits);
  if (d_logits) {
    *d_logits = (logits.array() - lse).exp();
    (*d_logits)(label) -= 1.0;
  }
  return lse - logits(label);
}

double distill_loss(const Eigen::VectorXd& student_logits,
                    const Eigen::VectorXd& teacher_logits, double temperature,
                    Eigen::VectorXd* d_student) {
  if (student_logits.size() != teacher_logits.size())
    throw std::invalid_argument("distill_loss: logit length mismatch");
  if (temperature <= 0.0)
    throw std::invalid_argument("distill_loss: temperature must be > 0");
  Eigen::VectorXd ts = teacher_logits / temperature;
  Eigen::VectorXd ss = student_logits / temperature;
  Eigen::VectorXd log_p = ts.array() - logsumexp(ts);
  Eigen::VectorXd log_q = ss.array() - logsumexp(ss);
  Eigen::VectorXd p = log_p.array().exp();
  if (d_student) {
    Eigen::VectorXd q = log_q.array().exp();
    *d_student = (q - p) / temperature;
  }
  return p.dot(log_p - log_q);
}

FlexiParams teacher_init(const FlexiParams& teacher, int underlying_patch,
                         int underlying_grid) {
  FlexiParams student = teacher;  // encoder blocks, head, CLS copied verbatim

  if (teacher.kernel.side != underlying_patch) {
    Eigen::MatrixXd kmap =
        pi_resize_matrix(teacher.kernel.side, underlying_patch).weights;
    int pt = teacher.kernel.side;
    int pu = underlying_patch;
    student.kernel.side = pu;
    student.kernel.weights.resize(teacher.kernel.channels * pu * pu,
                                  teacher.kernel.weights.cols());
    for (int ch = 0; ch < teacher.kernel.channels; ++ch)
      student.kernel.weights.middleRows(ch * pu * pu, pu * pu) =
          kmap * teacher.kernel.weights.middleRows(ch * pt * pt, pt * pt);
  }

  if (teacher.pos.side != underlying_grid) {
    Eigen::MatrixXd pmap =
        bilinear_matrix(teacher.pos.side, underlying_grid).weights;
    student.pos.side = underlying_grid;
    student.pos.grid = pmap * teacher.pos.grid;
  }
  return student;
}

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (warmup_steps < 0 || warmup_steps > steps)
    throw std::invalid_argument("TrainConfig: warmup must lie within total steps");
  if (temperature <= 0.0) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  if (image_side < 1) throw std::invalid_argument("TrainConfig: image_side must be >= 1");
}

double lr_at_step(const TrainConfig& cfg, long long step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (!cfg.cosine_decay) return cfg.lr;
  long long remaining = std::max<long long>(1, cfg.steps - cfg.warmup_steps);
  double progress = static_cast<double>(step - cfg.warmup_steps) /
                    static_cast<double>(remaining);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double evaluate_accuracy(const FlexiParams& params, const EncoderConfig& config,
                         const ShapeDataset& data, int patch_size, ResizeCache* cache) {
  ResizeCache local;
  ResizeCache& rc = cache ? *cache : local;
  int correct = 0;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    Eigen::VectorXd logits =
        flexi_forward(data.images[i], patch_size, params, config, EmbedMethod::kPi, &rc);
    Eigen::Index arg;
    logits.maxCoeff(&arg);
    if (static_cast<int>(arg) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

namespace {

struct AdamState {
  FlexiParams m;
  FlexiParams v;
  long long t = 0;
};

void adam_step(FlexiParams& params, FlexiParams& grads, AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++state.t;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));

  auto pv = tensor_views(params);
  auto gv = tensor_views(grads);
  auto mv = tensor_views(state.m);
  auto vv = tensor_views(state.v);
  for (std::size_t k = 0; k < pv.size(); ++k) {
    for (std::size_t i = 0; i < pv[k].size; ++i) {
      double g = gv[k].data[i];
      double m = kBeta1 * mv[k].data[i] + (1.0 - kBeta1) * g;
      double v = kBeta2 * vv[k].data[i] + (1.0 - kBeta2) * g * g;
      mv[k].data[i] = m;
      vv[k].data[i] = v;
      pv[k].data[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + kEps);
    }
  }
}

void clip_gradients(FlexiParams& grads, double max_norm) {
  double norm = std::sqrt(param_squared_norm(grads));
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (TensorView& t : tensor_views(grads))
      for (std::size_t i = 0; i < t.size; ++i) t.data[i] *= scale;
  }
}

}  // namespace

TrainResult train_flexi(const TrainConfig& cfg, const EncoderConfig& model_cfg,
                        const Schedule& schedule, const ShapeDataset& train_data,
                        const ShapeDataset* eval_data, const FlexiParams* init,
                        const TeacherSpec* teacher) {
  cfg.validate();
  model_cfg.validate();
  if (train_data.images.empty())
    throw std::invalid_argument("train_flexi: empty training set");
  if (cfg.loss == LossKind::kDistill && teacher == nullptr)
    throw std::invalid_argument("train_flexi: distillation loss needs a teacher");

  if (const auto* dist = std::get_if<PatchSizeDistribution>(&schedule)) {
    dist->validate_for_side(cfg.image_side);
  } else {
    const Curriculum& cur = std::get<Curriculum>(schedule);
    cur.validate();
    cur.large_dist.validate_for_side(cfg.image_side);
    cur.target_dist.validate_for_side(cfg.image_side);
  }

  TrainResult result;
  result.params = init ? *init : init_params(model_cfg, cfg.seed);

  // The teacher is a constant; evaluate it once per distinct image at its
  // own fixed patch size.
  std::vector<Eigen::VectorXd> teacher_logits;
  if (teacher) {
    ResizeCache trc;
    teacher_logits.reserve(train_data.images.size());
    for (const Image& img : train_data.images)
      teacher_logits.push_back(flexi_forward(img, teacher->patch_size, *teacher->params,
                                             *teacher->config, EmbedMethod::kPi, &trc));
  }

  AdamState adam{zeros_like(result.params), zeros_like(result.params), 0};
  FlexiParams grads = zeros_like(result.params);
  ResizeCache rc;
  Rng sample_rng(cfg.seed, /*stream=*/0x5A3);
  Rng batch_rng(cfg.seed, /*stream=*/0xBA7C);

  auto run_eval = [&](long long step) {
    if (!eval_data || cfg.eval_sizes.empty()) return;
    for (int size : cfg.eval_sizes)
      result.evals.push_back(
          {step, size, evaluate_accuracy(result.params, model_cfg, *eval_data, size, &rc)});
  };

  for (long long step = 0; step < cfg.steps; ++step) {
    PatchSizeDistribution dist;
    if (const auto* fixed = std::get_if<PatchSizeDistribution>(&schedule))
      dist = *fixed;
    else
      dist = curriculum_distribution(std::get<Curriculum>(schedule), step);
    int p = sample_patch_size(dist, sample_rng);

    for (TensorView& t : tensor_views(grads)) std::fill(t.data, t.data + t.size, 0.0);
    double loss_sum = 0.0;
    double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      std::size_t idx = static_cast<std::size_t>(batch_rng.below(train_data.images.size()));
      FlexiTrace trace =
          flexi_forward_trace(train_data.images[idx], p, result.params, model_cfg,
                              EmbedMethod::kPi, &rc);
      Eigen::VectorXd d_logits;
      double loss;
      if (cfg.loss == LossKind::kDistill)
        loss = distill_loss(trace.logits, teacher_logits[idx], cfg.temperature, &d_logits);
      else
        loss = supervised_loss(trace.logits, train_data.labels[idx], &d_logits);
      loss_sum += loss;
      d_logits *= inv_batch;
      flexi_backward(trace, result.params, model_cfg, d_logits, grads);
    }
    double loss_mean = loss_sum * inv_batch;
    if (!std::isfinite(loss_mean))
      throw NumericalError("train_flexi: non-finite loss at step " + std::to_string(step) +
                           " (patch size " + std::to_string(p) + ")");

    clip_gradients(grads, 1.0);
    double lr = lr_at_step(cfg, step);
    adam_step(result.params, grads, adam, lr);
    result.metrics.push_back({step, p, loss_mean, lr});

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps)
      run_eval(step + 1);
  }
  run_eval(cfg.steps);
  return result;
}

}  // namespace flexivit
