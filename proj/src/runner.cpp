#include "flexivit/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace flexivit {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& path, const FlexiParams& params,
                     const EncoderConfig& config) {
  FxtMap m;
  FlexiParams copy = params;
  for (TensorView& t : tensor_views(copy)) {
    FxtTensor ft;
    ft.dims = t.dims;
    ft.values.assign(t.data, t.data + t.size);
    m.emplace(t.name, std::move(ft));
  }
  FxtTensor meta;
  meta.dims = {8};
  meta.values = {static_cast<double>(config.depth),
                 static_cast<double>(config.width),
                 static_cast<double>(config.heads),
                 static_cast<double>(config.mlp_ratio),
                 static_cast<double>(config.num_classes),
                 static_cast<double>(config.underlying_patch),
                 static_cast<double>(config.underlying_grid),
                 static_cast<double>(config.channels)};
  m.emplace("meta", std::move(meta));
  fxt_write(path, m);
}

Checkpoint load_checkpoint(const std::string& path) {
  FxtMap m = fxt_read(path);
  auto meta = m.find("meta");
  if (meta == m.end() || meta->second.values.size() != 8)
    throw std::runtime_error("load_checkpoint: missing meta tensor");
  EncoderConfig cfg;
  cfg.depth = static_cast<int>(meta->second.values[0]);
  cfg.width = static_cast<int>(meta->second.values[1]);
  cfg.heads = static_cast<int>(meta->second.values[2]);
  cfg.mlp_ratio = static_cast<int>(meta->second.values[3]);
  cfg.num_classes = static_cast<int>(meta->second.values[4]);
  cfg.underlying_patch = static_cast<int>(meta->second.values[5]);
  cfg.underlying_grid = static_cast<int>(meta->second.values[6]);
  cfg.channels = static_cast<int>(meta->second.values[7]);
  cfg.validate();

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = init_params(cfg, 0);
  for (TensorView& t : tensor_views(ckpt.params)) {
    auto it = m.find(t.name);
    if (it == m.end())
      throw std::runtime_error("load_checkpoint: missing tensor '" + t.name + "'");
    if (it->second.values.size() != t.size)
      throw std::runtime_error("load_checkpoint: size mismatch for '" + t.name + "'");
    std::copy(it->second.values.begin(), it->second.values.end(), t.data);
  }
  return ckpt;
}

EncoderConfig encoder_config_of(const ExperimentConfig& cfg) {
  EncoderConfig e;
  e.depth = cfg.depth;
  e.width = cfg.width;
  e.heads = cfg.heads;
  e.mlp_ratio = cfg.mlp_ratio;
  e.num_classes = cfg.num_classes;
  e.underlying_patch = cfg.underlying_patch;
  e.underlying_grid = cfg.underlying_grid;
  e.channels = cfg.channels;
  return e;
}

TrainConfig train_config_of(const ExperimentConfig& cfg) {
  TrainConfig t;
  t.steps = cfg.steps;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.warmup_steps = std::min(cfg.warmup_steps, cfg.steps);
  t.cosine_decay = cfg.cosine_decay;
  t.loss = cfg.loss == "distill" ? LossKind::kDistill : LossKind::kXent;
  t.temperature = cfg.temperature;
  t.seed = cfg.seed;
  t.image_side = cfg.image_side;
  t.eval_sizes = cfg.effective_eval_sizes();
  t.eval_every = cfg.eval_every;
  return t;
}

PatchSizeDistribution distribution_of(const std::vector<int>& sizes,
                                      const std::string& weights) {
  if (weights == "uniform") return PatchSizeDistribution::uniform(sizes);
  if (weights == "triangular") return triangular_distribution(sizes);
  PatchSizeDistribution d;
  d.sizes = sizes;
  std::stringstream ss(weights);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) d.weights.push_back(std::stod(item));
  d.validate();
  return d;
}

Schedule schedule_of(const ExperimentConfig& cfg) {
  PatchSizeDistribution target = distribution_of(cfg.patch_sizes, cfg.patch_weights);
  if (!cfg.curriculum) return target;
  Curriculum cur;
  cur.large_dist = distribution_of(cfg.large_sizes, cfg.large_weights);
  cur.target_dist = target;
  cur.schedule_fraction = cfg.schedule_fraction;
  cur.ramp_fraction = cfg.ramp_fraction;
  cur.total_steps = cfg.steps;
  return cur;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,patch_size,loss,lr\n";
  for (const MetricRow& r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.patch_size) + "," +
           format_double(r.loss) + "," + format_double(r.lr) + "\n";
  return out;
}

std::string evals_csv(const std::vector<EvalRow>& rows) {
  std::string out = "step,patch_size,accuracy\n";
  for (const EvalRow& r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.patch_size) + "," +
           format_double(r.accuracy) + "\n";
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "patch_size,accuracy,gflops,seq_len\n";
  for (const SweepRow& r : rows)
    out += std::to_string(r.patch_size) + "," + format_double(r.accuracy) + "," +
           format_double(r.gflops) + "," + std::to_string(r.seq_len) + "\n";
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

namespace {

struct PreparedRun {
  EncoderConfig model;
  TrainConfig train;
  Schedule schedule;
  ShapeDataset train_data;
  ShapeDataset eval_data;
};

PreparedRun prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedRun run{encoder_config_of(cfg), train_config_of(cfg), schedule_of(cfg),
                  gen_shapes(cfg.seed, cfg.train_n, cfg.image_side, cfg.channels),
                  gen_shapes(cfg.seed + 1, std::max(cfg.eval_n, 1), cfg.image_side,
                             cfg.channels)};
  return run;
}

void write_run_outputs(const ExperimentConfig& cfg, const TrainResult& result,
                       const EncoderConfig& model) {
  fs::create_directories(cfg.out_dir);
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.fxt").string(), result.params, model);
  write_text_file((fs::path(cfg.out_dir) / "metrics.csv").string(),
                  metrics_csv(result.metrics));
  write_text_file((fs::path(cfg.out_dir) / "sweep.csv").string(), evals_csv(result.evals));
  write_text_file((fs::path(cfg.out_dir) / "config.echo.txt").string(),
                  cfg.canonical_text());
}

}  // namespace

void run_train(const ExperimentConfig& cfg) {
  PreparedRun run = prepare(cfg);
  TrainResult result =
      train_flexi(run.train, run.model, run.schedule, run.train_data, &run.eval_data);
  write_run_outputs(cfg, result, run.model);
}

void run_distill(const ExperimentConfig& cfg, const std::string& teacher_ckpt,
                 bool teacher_initialize) {
  PreparedRun run = prepare(cfg);
  Checkpoint teacher = load_checkpoint(teacher_ckpt);
  if (teacher.config.width != run.model.width ||
      teacher.config.depth != run.model.depth ||
      teacher.config.heads != run.model.heads ||
      teacher.config.mlp_ratio != run.model.mlp_ratio ||
      teacher.config.num_classes != run.model.num_classes ||
      teacher.config.channels != run.model.channels)
    throw std::invalid_argument("run_distill: teacher encoder dims do not match");

  // The teacher's own training size: the side its kernel was learned at.
  int teacher_patch = teacher.config.underlying_patch;

  FlexiParams init = teacher_initialize
                         ? teacher_init(teacher.params, run.model.underlying_patch,
                                        run.model.underlying_grid)
                         : init_params(run.model, cfg.seed);

  // Init-time top-1 agreement with the teacher, one row per eval size.
  ResizeCache rc;
  std::string agreement_csv = "patch_size,agreement\n";
  Eigen::MatrixXd teacher_preds_logits = dataset_logits(
      teacher.params, teacher.config, run.eval_data, teacher_patch, &rc);
  Eigen::VectorXi teacher_preds = predictions(teacher_preds_logits);
  for (int size : cfg.effective_eval_sizes()) {
    Eigen::MatrixXd student_logits =
        dataset_logits(init, run.model, run.eval_data, size, &rc);
    agreement_csv += std::to_string(size) + "," +
                     format_double(agreement(predictions(student_logits), teacher_preds)) +
                     "\n";
  }

  TeacherSpec spec{&teacher.params, &teacher.config, teacher_patch};
  TrainConfig train_cfg = run.train;
  train_cfg.loss = LossKind::kDistill;
  TrainResult result = train_flexi(train_cfg, run.model, run.schedule, run.train_data,
                                   &run.eval_data, &init, &spec);
  write_run_outputs(cfg, result, run.model);
  write_text_file((fs::path(cfg.out_dir) / "init_agreement.csv").string(), agreement_csv);
}

ResizeVerifyReport resize_verify(int p_in, int p_out, int trials, std::uint64_t seed) {
  if (p_in < 1 || p_out < 1)
    throw std::invalid_argument("resize_verify: sides must be >= 1");
  if (trials < 1) throw std::invalid_argument("resize_verify: trials must be >= 1");

  ResizeVerifyReport report;
  report.p_in = p_in;
  report.p_out = p_out;
  report.trials = trials;

  Eigen::MatrixXd bil = bilinear_matrix(p_in, p_out).weights;
  Eigen::MatrixXd pi = pi_resize_matrix(p_in, p_out).weights;
  Eigen::MatrixXd area = area_matrix(p_in, p_out).weights;

  Rng rng(seed, 0x7E57);
  int n = p_in * p_in;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd x(n), w(n);
    for (int i = 0; i < n; ++i) x(i) = rng.normal();
    for (int i = 0; i < n; ++i) w(i) = rng.normal();
    double ref = x.dot(w);
    Eigen::VectorXd bx = bil * x;
    report.pi_dev = std::max(report.pi_dev, std::abs(ref - bx.dot(pi * w)));
    report.vanilla_dev = std::max(report.vanilla_dev, std::abs(ref - bx.dot(bil * w)));
    report.area_dev = std::max(report.area_dev, std::abs(ref - bx.dot(area * w)));
    Eigen::VectorXd bw = bil * w;
    double wn = w.norm(), bn = bw.norm();
    Eigen::VectorXd nw = bn > 0.0 ? Eigen::VectorXd(bw * (wn / bn)) : bw;
    report.norm_dev = std::max(report.norm_dev, std::abs(ref - bx.dot(nw)));
  }

  if (p_out >= p_in) {
    report.pass = report.pi_dev < 1e-9;
  } else {
    // Downsampling: compare the PI residual to an independent
    // normal-equations least-squares solve.
    Rng rng2(seed, 0x7E58);
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w(i) = rng2.normal();
    Eigen::VectorXd w_pi = pi * w;
    report.pi_residual = (w - bil.transpose() * w_pi).squaredNorm();
    Eigen::MatrixXd gram = bil * bil.transpose();
    Eigen::VectorXd w_ls = gram.ldlt().solve(bil * w);
    report.oracle_residual = (w - bil.transpose() * w_ls).squaredNorm();
    report.pass = std::abs(report.pi_residual - report.oracle_residual) <=
                  1e-8 * (1.0 + report.oracle_residual);
  }
  return report;
}

std::string format_resize_report(const ResizeVerifyReport& r) {
  std::ostringstream out;
  out << "resize-verify " << r.p_in << " -> " << r.p_out << " (" << r.trials
      << " trials)\n";
  out << "  max |<x,w> - <resize(x), resize(w)>|\n";
  out << "    pi      " << format_double(r.pi_dev) << "\n";
  out << "    vanilla " << format_double(r.vanilla_dev) << "\n";
  out << "    area    " << format_double(r.area_dev) << "\n";
  out << "    norm    " << format_double(r.norm_dev) << "\n";
  if (r.p_out < r.p_in) {
    out << "  downsampling residual ||w - B^T w_hat||^2\n";
    out << "    pi      " << format_double(r.pi_residual) << "\n";
    out << "    oracle  " << format_double(r.oracle_residual) << "\n";
  }
  out << (r.pass ? "PASS" : "FAIL") << "\n";
  return out.str();
}

void run_analyze(const std::string& checkpoint_path, const std::string& dataset_path,
                 const AnalyzeOptions& opts) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  ShapeDataset data = load_dataset_fxt(dataset_path);
  fs::create_directories(opts.out_dir);
  ResizeCache rc;

  std::vector<int> sizes = opts.sizes;
  if (sizes.empty()) throw std::invalid_argument("analyze: --sizes is required");
  int block = opts.block < 0 ? ckpt.config.depth - 1 : opts.block;
  Sublayer sublayer = opts.sublayer == "attn" ? Sublayer::kAttn : Sublayer::kMlp;

  if (opts.mode == "sweep") {
    std::vector<SweepRow> rows = eval_sweep(ckpt.params, ckpt.config, data, sizes, &rc);
    write_text_file((fs::path(opts.out_dir) / "sweep.csv").string(), sweep_csv(rows));
  } else if (opts.mode == "cka") {
    // Pairwise CKA of pooled block features across patch sizes.
    std::vector<FeatureMatrix> feats;
    for (int p : sizes)
      feats.push_back(dataset_features(ckpt.params, ckpt.config, data, block, sublayer, p, &rc));
    std::string csv = "tag,block=" + std::to_string(block) + ",sublayer=" + opts.sublayer;
    for (int p : sizes) csv += ",p" + std::to_string(p);
    csv += "\n";
    for (std::size_t i = 0; i < feats.size(); ++i) {
      csv += "p" + std::to_string(sizes[i]);
      for (std::size_t j = 0; j < feats.size(); ++j)
        csv += "," + format_double(linear_cka(feats[i].values, feats[j].values));
      csv += "\n";
    }
    write_text_file((fs::path(opts.out_dir) / "cka.csv").string(), csv);
  } else if (opts.mode == "cosine") {
    int seed_size = opts.seed_size > 0 ? opts.seed_size : sizes.front();
    for (int q : sizes) {
      CosineMap map = token_cosine_map(ckpt.params, ckpt.config, data, block, sublayer,
                                       seed_size, q, &rc);
      std::string csv;
      for (int r = 0; r < map.grid.rows(); ++r) {
        for (int c = 0; c < map.grid.cols(); ++c) {
          if (c) csv += ",";
          csv += format_double(map.grid(r, c));
        }
        csv += "\n";
      }
      write_text_file((fs::path(opts.out_dir) /
                       ("cosine_p" + std::to_string(seed_size) + "_q" + std::to_string(q) +
                        "_b" + std::to_string(block) + ".csv"))
                          .string(),
                      csv);
    }
  } else if (opts.mode == "ensemble") {
    std::vector<Eigen::MatrixXd> logit_sets;
    std::string csv = "patch_size,accuracy,gflops\n";
    double total_gflops = 0.0;
    for (int p : sizes) {
      logit_sets.push_back(dataset_logits(ckpt.params, ckpt.config, data, p, &rc));
      Eigen::VectorXi preds = predictions(logit_sets.back());
      int correct = 0;
      for (Eigen::Index i = 0; i < preds.size(); ++i)
        if (preds(i) == data.labels[i]) ++correct;
      int g = data.side / p;
      double gf = flops_estimate(ckpt.config, static_cast<long long>(g) * g, p).total() / 1e9;
      total_gflops += gf;
      csv += std::to_string(p) + "," +
             format_double(static_cast<double>(correct) / preds.size()) + "," +
             format_double(gf) + "\n";
    }
    Eigen::VectorXi ens = ensemble_predict(logit_sets);
    int correct = 0;
    for (Eigen::Index i = 0; i < ens.size(); ++i)
      if (ens(i) == data.labels[i]) ++correct;
    csv += "ensemble," + format_double(static_cast<double>(correct) / ens.size()) + "," +
           format_double(total_gflops) + "\n";
    write_text_file((fs::path(opts.out_dir) / "ensemble.csv").string(), csv);
  } else {
    throw std::invalid_argument("analyze: unknown mode '" + opts.mode + "'");
  }
}

void run_gen_data(const std::string& out_path, std::uint64_t seed, int n, int side,
                  int channels) {
  save_dataset_fxt(out_path, gen_shapes(seed, n, side, channels));
}

}  // namespace flexivit
