#include "bdsl/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bdsl/checkpoint.hpp"
#include "bdsl/rng.hpp"
#include "bdsl/shard.hpp"

namespace bdsl {

using nlohmann::ordered_json;

std::string normalization_mode_name(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::kBdslBox: return "signing_box";
    case NormalizationMode::kStandard: return "standard";
  }
  throw UsageError("unknown normalization mode");
}

NormalizationMode normalization_mode_from_name(const std::string& name) {
  if (name == "signing_box") return NormalizationMode::kBdslBox;
  if (name == "standard") return NormalizationMode::kStandard;
  throw UsageError("unknown normalization mode '" + name + "' (expected signing_box|standard)");
}

ordered_json run_config_to_json(const RunConfig& rc) {
  ordered_json j;
  j["seed"] = rc.seed;
  j["workers"] = rc.workers;
  j["model"] = model_config_to_json(rc.model);

  ordered_json t;
  t["max_epochs"] = rc.train.max_epochs;
  t["patience"] = rc.train.patience;
  t["batch_size"] = rc.train.batch_size;
  t["label_smoothing_eps"] = rc.train.label_smoothing_eps;
  t["weight_decay"] = rc.train.weight_decay;
  t["max_lr"] = rc.train.max_lr;
  t["pct_start"] = rc.train.pct_start;
  t["div_factor"] = rc.train.div_factor;
  t["final_div_factor"] = rc.train.final_div_factor;
  t["curriculum_lengths"] = rc.train.curriculum_lengths;
  j["train"] = std::move(t);

  ordered_json p;
  p["normalization_mode"] = normalization_mode_name(rc.preprocess.mode);
  p["alpha"] = rc.preprocess.alpha;
  ordered_json a;
  a["enabled"] = rc.preprocess.augment.enabled;
  a["hflip_probability"] = rc.preprocess.augment.hflip_probability;
  a["noise_sigma"] = rc.preprocess.augment.noise_sigma;
  a["temporal_dropout_rate"] = rc.preprocess.augment.temporal_dropout_rate;
  p["augment"] = std::move(a);
  j["preprocess"] = std::move(p);

  ordered_json s;
  s["n_classes"] = rc.synth.n_classes;
  s["n_signers"] = rc.synth.n_signers;
  s["samples_per_class_per_signer"] = rc.synth.samples_per_class_per_signer;
  s["frame_min"] = rc.synth.frame_range.first;
  s["frame_max"] = rc.synth.frame_range.second;
  s["trajectory_noise"] = rc.synth.trajectory_noise;
  s["hand_dropout_prob"] = rc.synth.hand_dropout_prob;
  s["image_width"] = rc.synth.image_width;
  s["image_height"] = rc.synth.image_height;
  s["fps"] = rc.synth.fps;
  j["synth"] = std::move(s);
  return j;
}

RunConfig run_config_from_json(const ordered_json& j) {
  RunConfig rc;
  try {
    if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("workers")) rc.workers = j.at("workers").get<int>();
    if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("max_epochs")) rc.train.max_epochs = t.at("max_epochs").get<int>();
      if (t.contains("patience")) rc.train.patience = t.at("patience").get<int>();
      if (t.contains("batch_size")) rc.train.batch_size = t.at("batch_size").get<int>();
      if (t.contains("label_smoothing_eps")) {
        rc.train.label_smoothing_eps = t.at("label_smoothing_eps").get<double>();
      }
      if (t.contains("weight_decay")) rc.train.weight_decay = t.at("weight_decay").get<double>();
      if (t.contains("max_lr")) rc.train.max_lr = t.at("max_lr").get<double>();
      if (t.contains("pct_start")) rc.train.pct_start = t.at("pct_start").get<double>();
      if (t.contains("div_factor")) rc.train.div_factor = t.at("div_factor").get<double>();
      if (t.contains("final_div_factor")) {
        rc.train.final_div_factor = t.at("final_div_factor").get<double>();
      }
      if (t.contains("curriculum_lengths")) {
        rc.train.curriculum_lengths = t.at("curriculum_lengths").get<std::vector<int>>();
      }
    }
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      if (p.contains("normalization_mode")) {
        rc.preprocess.mode = normalization_mode_from_name(p.at("normalization_mode").get<std::string>());
      }
      if (p.contains("alpha")) rc.preprocess.alpha = p.at("alpha").get<double>();
      if (p.contains("augment")) {
        const auto& a = p.at("augment");
        if (a.contains("enabled")) rc.preprocess.augment.enabled = a.at("enabled").get<bool>();
        if (a.contains("hflip_probability")) {
          rc.preprocess.augment.hflip_probability = a.at("hflip_probability").get<double>();
        }
        if (a.contains("noise_sigma")) {
          rc.preprocess.augment.noise_sigma = a.at("noise_sigma").get<double>();
        }
        if (a.contains("temporal_dropout_rate")) {
          rc.preprocess.augment.temporal_dropout_rate = a.at("temporal_dropout_rate").get<double>();
        }
      }
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      if (s.contains("n_classes")) rc.synth.n_classes = s.at("n_classes").get<int>();
      if (s.contains("n_signers")) rc.synth.n_signers = s.at("n_signers").get<int>();
      if (s.contains("samples_per_class_per_signer")) {
        rc.synth.samples_per_class_per_signer = s.at("samples_per_class_per_signer").get<int>();
      }
      if (s.contains("frame_min")) rc.synth.frame_range.first = s.at("frame_min").get<int>();
      if (s.contains("frame_max")) rc.synth.frame_range.second = s.at("frame_max").get<int>();
      if (s.contains("trajectory_noise")) {
        rc.synth.trajectory_noise = s.at("trajectory_noise").get<double>();
      }
      if (s.contains("hand_dropout_prob")) {
        rc.synth.hand_dropout_prob = s.at("hand_dropout_prob").get<double>();
      }
      if (s.contains("image_width")) rc.synth.image_width = s.at("image_width").get<int>();
      if (s.contains("image_height")) rc.synth.image_height = s.at("image_height").get<int>();
      if (s.contains("fps")) rc.synth.fps = s.at("fps").get<double>();
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("run config: ") + e.what());
  }
  rc.resolve();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const ordered_json::exception& e) {
    throw DataError("config file " + path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const UsageError& e) {
    // Bad enum names etc. inside a config FILE are data errors.
    throw DataError("config file " + path.string() + ": " + e.what());
  }
}

void echo_resolved_config(const RunConfig& rc, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "resolved_config.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << run_config_to_json(rc).dump(2) << '\n';
}

void cmd_synth(const RunConfig& rc, const std::filesystem::path& out_dir) {
  write_synthetic(rc.synth, rc.seed, out_dir);
  echo_resolved_config(rc, out_dir);
  log_info(strformat("synth: wrote %d classes x %d signers x %d takes to %s", rc.synth.n_classes,
                     rc.synth.n_signers, rc.synth.samples_per_class_per_signer,
                     out_dir.string().c_str()));
}

void cmd_preprocess(const RunConfig& rc, const std::filesystem::path& samples_path,
                    const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir) {
  const LabelVocab vocab = LabelVocab::load(vocab_path);
  const std::vector<SignSample> samples = load_manifest(samples_path, vocab);
  if (samples.empty()) throw DataError("preprocess: no samples in " + samples_path.string());

  PreprocessConfig pcfg = rc.preprocess;
  pcfg.augment.enabled = false;
  pcfg.target_len = rc.model.seq_len;

  FeatureShard shard;
  shard.t = static_cast<std::uint32_t>(pcfg.target_len);
  shard.dim = static_cast<std::uint32_t>(kFeatureDim);
  shard.records.resize(samples.size());
  parallel_for(samples.size(), rc.workers, [&](std::size_t i) {
    shard.records[i] = preprocess_sample(samples[i], pcfg, nullptr).data.cast<float>();
  });

  std::filesystem::create_directories(out_dir);
  write_feature_shard(out_dir / "features.bfts", shard);
  std::vector<ShardManifestRow> rows(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rows[i] = {samples[i].video_id, vocab.name(samples[i].label), samples[i].signer_id,
               i * static_cast<std::uint64_t>(shard.t)};
  }
  write_shard_manifest(out_dir / "manifest.tsv", rows);
  echo_resolved_config(rc, out_dir);
  log_info(strformat("preprocess: %zu sequences -> %s", samples.size(), out_dir.string().c_str()));
}

namespace {

std::vector<int> labels_of(const std::vector<const SignSample*>& samples) {
  std::vector<int> labels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i]->label;
  return labels;
}

// Signer-disjoint carve-out of roughly val_fraction of the signers (at least
// one on each side), deterministic by seed.
void carve_validation(const std::vector<const SignSample*>& all, double val_fraction,
                      std::uint64_t seed, std::vector<const SignSample*>& train_out,
                      std::vector<const SignSample*>& val_out) {
  std::vector<std::string> signer_order;
  for (const SignSample* s : all) {
    if (std::find(signer_order.begin(), signer_order.end(), s->signer_id) == signer_order.end()) {
      signer_order.push_back(s->signer_id);
    }
  }
  if (signer_order.size() < 2) throw DataError("need at least 2 signers to carve a validation set");
  Rng rng(seed);
  rng.shuffle(signer_order);
  const auto n = signer_order.size();
  const auto n_val = static_cast<std::size_t>(std::clamp<long long>(
      std::llround(val_fraction * static_cast<double>(n)), 1, static_cast<long long>(n) - 1));
  std::set<std::string> val_signers(signer_order.begin(),
                                    signer_order.begin() + static_cast<std::ptrdiff_t>(n_val));
  train_out.clear();
  val_out.clear();
  for (const SignSample* s : all) {
    (val_signers.count(s->signer_id) ? val_out : train_out).push_back(s);
  }
}

}  // namespace

double cmd_train(const RunConfig& rc, const std::filesystem::path& samples_path,
                 const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir) {
  const LabelVocab vocab = LabelVocab::load(vocab_path);
  const std::vector<SignSample> samples = load_manifest(samples_path, vocab);

  RunConfig local = rc;
  local.model.n_classes = vocab.size();
  local.resolve();

  const SplitSpec split = speaker_disjoint_split(samples, {0.7, 0.15, 0.15}, local.seed);
  const auto train_set = select_by_signers(samples, split.train_signers);
  const auto val_set = select_by_signers(samples, split.val_signers);
  const auto test_set = select_by_signers(samples, split.test_signers);
  log_info(strformat("train: %zu train / %zu val / %zu test sequences (%zu/%zu/%zu signers)",
                     train_set.size(), val_set.size(), test_set.size(), split.train_signers.size(),
                     split.val_signers.size(), split.test_signers.size()));

  Model<float> model(local.model);
  Rng init_rng(local.seed);
  model.init(init_rng);
  FitResult result = fit(train_set, val_set, model, local.train, local.preprocess, local.workers);
  model.params() = result.best_params;

  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir / "checkpoint.bspt", local.model, model.params());
  result.log.write_tsv(out_dir / "train_log.tsv");

  const MatD val_logits = predict_logits(model, val_set, local.preprocess, local.workers);
  const MetricsReport val_report =
      MetricsReport::from_logits(val_logits, labels_of(val_set), vocab.size());
  write_metrics_json(val_report, out_dir / "val_metrics.json");

  const MatD test_logits = predict_logits(model, test_set, local.preprocess, local.workers);
  const MetricsReport test_report =
      MetricsReport::from_logits(test_logits, labels_of(test_set), vocab.size());
  write_metrics_json(test_report, out_dir / "test_metrics.json");

  echo_resolved_config(local, out_dir);
  log_info(strformat("train: best epoch %d val top1 %.4f, held-out test top1 %.4f",
                     result.best_epoch, result.best_val_top1, test_report.top1));
  return test_report.top1;
}

MetricsReport cmd_eval(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
                       const std::filesystem::path& samples_path,
                       const std::filesystem::path& vocab_path,
                       const std::filesystem::path& out_dir, bool write_pgm) {
  auto [cfg, params] = load_checkpoint(checkpoint_path);
  const LabelVocab vocab = LabelVocab::load(vocab_path);
  if (cfg.n_classes != vocab.size()) {
    throw DataError(strformat("checkpoint has %d classes but vocabulary has %d", cfg.n_classes,
                              vocab.size()));
  }
  const std::vector<SignSample> samples = load_manifest(samples_path, vocab);
  if (samples.empty()) throw DataError("eval: no samples in " + samples_path.string());

  Model<float> model(cfg);
  model.params() = std::move(params);
  std::vector<const SignSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);

  const MatD logits = predict_logits(model, ptrs, rc.preprocess, rc.workers);
  const MetricsReport report = MetricsReport::from_logits(logits, labels_of(ptrs), vocab.size());

  std::filesystem::create_directories(out_dir);
  write_metrics_json(report, out_dir / "metrics.json");
  write_confusion_tsv(report.confusion, out_dir / "confusion.tsv");
  if (write_pgm) write_confusion_pgm(report.confusion, out_dir / "confusion.pgm");
  echo_resolved_config(rc, out_dir);
  log_info(strformat("eval: %zu sequences, top1 %.4f top5 %.4f macro_f1 %.4f", samples.size(),
                     report.top1, report.top5, report.macro_f1));
  return report;
}

void cmd_infer(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& samples_path, const std::filesystem::path& vocab_path,
               const std::filesystem::path& out_dir, int top_k) {
  auto [cfg, params] = load_checkpoint(checkpoint_path);
  const LabelVocab vocab = LabelVocab::load(vocab_path);
  if (cfg.n_classes != vocab.size()) {
    throw DataError(strformat("checkpoint has %d classes but vocabulary has %d", cfg.n_classes,
                              vocab.size()));
  }
  if (top_k < 1 || top_k > cfg.n_classes) {
    throw UsageError(strformat("top_k must lie in [1, %d]", cfg.n_classes));
  }
  const std::vector<SignSample> samples = load_manifest(samples_path, vocab);
  if (samples.empty()) throw DataError("infer: no samples in " + samples_path.string());

  Model<float> model(cfg);
  model.params() = std::move(params);
  std::vector<const SignSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  const MatD logits = predict_logits(model, ptrs, rc.preprocess, rc.workers);

  std::filesystem::create_directories(out_dir);
  const auto pred_path = out_dir / "predictions.tsv";
  std::ofstream out(pred_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + pred_path.string());
  out << "video_id\trank\tclass\tprob\n";
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd row = logits.row(i);
    const double row_max = row.maxCoeff();
    Eigen::ArrayXd p = (row.array() - row_max).exp();
    p /= p.sum();
    std::vector<int> idx(static_cast<std::size_t>(cfg.n_classes));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (p(a) != p(b)) return p(a) > p(b);
      return a < b;
    });
    for (int r = 0; r < top_k; ++r) {
      out << samples[static_cast<std::size_t>(i)].video_id << '\t' << (r + 1) << '\t'
          << vocab.name(idx[static_cast<std::size_t>(r)]) << '\t'
          << strformat("%.9g", p(idx[static_cast<std::size_t>(r)])) << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + pred_path.string());
  out.close();
  echo_resolved_config(rc, out_dir);
  log_info(strformat("infer: wrote top-%d predictions for %zu sequences", top_k, samples.size()));
}

ThroughputReport cmd_profile(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
                             const std::filesystem::path& out_dir, int n_warmup, int n_timed) {
  ModelConfig cfg = rc.model;
  ModelParams<float> params;
  bool have_params = false;
  if (!checkpoint_path.empty()) {
    auto loaded = load_checkpoint(checkpoint_path);
    cfg = loaded.first;
    params = std::move(loaded.second);
    have_params = true;
  }
  Model<float> model(cfg);
  if (have_params) {
    model.params() = std::move(params);
  } else {
    Rng rng(rc.seed);
    model.init(rng);
  }
  const ThroughputReport rep = throughput_profile(model, n_warmup, n_timed, rc.seed);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "profile.tsv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "parameters\tflops_macs\tmean_latency_ms\tp95_latency_ms\tfps\tn_timed\t"
           "working_set_bytes\tflops_text\n";
    out << strformat("%llu\t%llu\t%.6f\t%.6f\t%.3f\t%d\t%llu\t%s\n",
                     static_cast<unsigned long long>(rep.parameters),
                     static_cast<unsigned long long>(rep.flops_macs), rep.mean_latency_ms,
                     rep.p95_latency_ms, rep.fps, rep.n_timed,
                     static_cast<unsigned long long>(rep.working_set_bytes), rep.flops_text.c_str());
    RunConfig echoed = rc;
    echoed.model = cfg;
    echo_resolved_config(echoed, out_dir);
  }
  return rep;
}

CVResult cmd_xval(const RunConfig& rc, const std::filesystem::path& samples_path,
                  const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir,
                  int k_folds, const std::vector<double>& baseline_accuracies) {
  const LabelVocab vocab = LabelVocab::load(vocab_path);
  const std::vector<SignSample> samples = load_manifest(samples_path, vocab);

  RunConfig local = rc;
  local.model.n_classes = vocab.size();
  local.resolve();

  FoldRunner runner = [&](const std::vector<const SignSample*>& fold_train,
                          const std::vector<const SignSample*>& fold_eval, int fold) -> double {
    std::vector<const SignSample*> inner_train, inner_val;
    carve_validation(fold_train, 0.15, mix_seed(local.seed, 0x56414C44ULL,
                                                static_cast<std::uint64_t>(fold)),
                     inner_train, inner_val);
    Model<float> model(local.model);
    Rng init_rng(mix_seed(local.seed, 0x464F4C44ULL, static_cast<std::uint64_t>(fold)));
    model.init(init_rng);
    FitResult fr = fit(inner_train, inner_val, model, local.train, local.preprocess, local.workers);
    model.params() = fr.best_params;
    const MatD logits = predict_logits(model, fold_eval, local.preprocess, local.workers);
    const double acc = topk_accuracy(logits, labels_of(fold_eval), 1);
    log_info(strformat("xval: fold %d accuracy %.4f", fold, acc));
    return acc;
  };

  std::optional<std::vector<double>> baseline;
  if (!baseline_accuracies.empty()) baseline = baseline_accuracies;
  const CVResult cv = cross_validate(samples, k_folds, local.seed, runner, baseline);

  std::filesystem::create_directories(out_dir);
  ordered_json j;
  j["fold_accuracies"] = cv.fold_accuracies;
  j["mean"] = cv.mean;
  j["stddev"] = cv.stddev;
  j["ci95"] = {cv.ci95.first, cv.ci95.second};
  if (cv.cohens_d_vs_baseline.has_value()) {
    j["cohens_d_vs_baseline"] = *cv.cohens_d_vs_baseline;
  }
  const auto path = out_dir / "cv_result.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  echo_resolved_config(local, out_dir);
  log_info(strformat("xval: %d folds, mean %.4f ci95 [%.4f, %.4f]", k_folds, cv.mean,
                     cv.ci95.first, cv.ci95.second));
  return cv;
}

}  // namespace bdsl
