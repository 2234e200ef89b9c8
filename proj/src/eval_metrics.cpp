#include "bdsl/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "bdsl/rng.hpp"

namespace bdsl {

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<int>& labels,
                                                  const std::vector<int>& predictions, int n_classes) {
  if (labels.size() != predictions.size()) {
    throw UsageError("confusion matrix: labels and predictions differ in length");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cm.at(labels[i], predictions[i]) += 1;
  }
  return cm;
}

std::int64_t& ConfusionMatrix::at(int true_class, int predicted_class) {
  if (true_class < 0 || true_class >= n_classes_ || predicted_class < 0 || predicted_class >= n_classes_) {
    throw UsageError(strformat("confusion matrix: index (%d, %d) outside %dx%d", true_class,
                               predicted_class, n_classes_, n_classes_));
  }
  return counts_[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(n_classes_) +
                 static_cast<std::size_t>(predicted_class)];
}

std::int64_t ConfusionMatrix::at(int true_class, int predicted_class) const {
  return const_cast<ConfusionMatrix*>(this)->at(true_class, predicted_class);
}

std::int64_t ConfusionMatrix::row_sum(int true_class) const {
  std::int64_t s = 0;
  for (int j = 0; j < n_classes_; ++j) s += at(true_class, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int predicted_class) const {
  std::int64_t s = 0;
  for (int i = 0; i < n_classes_; ++i) s += at(i, predicted_class);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t v : counts_) s += v;
  return s;
}

double topk_accuracy(const MatD& logits, const std::vector<int>& labels, int k) {
  const auto n = logits.rows();
  const auto c = logits.cols();
  if (n < 1) throw UsageError("topk_accuracy: empty input");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw UsageError("topk_accuracy: labels and logits differ in length");
  }
  if (k < 1 || k > c) throw UsageError(strformat("topk_accuracy: k=%d outside [1, %ld]", k, static_cast<long>(c)));

  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) {
      throw DataError(strformat("topk_accuracy: label %d outside [0, %ld)", label, static_cast<long>(c)));
    }
    const double label_logit = logits(i, label);
    // Rank of the true label: classes strictly better, plus equal-logit
    // classes with a lower index (those rank ahead under the tie-break).
    Eigen::Index rank = 0;
    for (Eigen::Index j = 0; j < c; ++j) {
      if (j == label) continue;
      const double v = logits(i, j);
      if (v > label_logit || (v == label_logit && j < label)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<int> argmax_predictions(const MatD& logits) {
  std::vector<int> preds(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
    }
    preds[static_cast<std::size_t>(i)] = best;
  }
  return preds;
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> f1(static_cast<std::size_t>(cm.n_classes()), 0.0);
  for (int i = 0; i < cm.n_classes(); ++i) {
    const auto tp = static_cast<double>(cm.at(i, i));
    const auto support = static_cast<double>(cm.row_sum(i));
    const auto predicted = static_cast<double>(cm.col_sum(i));
    const double precision = predicted > 0.0 ? tp / predicted : 0.0;
    const double recall = support > 0.0 ? tp / support : 0.0;
    f1[static_cast<std::size_t>(i)] =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() < 1) throw UsageError("macro_f1: empty confusion matrix");
  const auto f1 = per_class_f1(cm);
  double sum = 0.0;
  for (double v : f1) sum += v;
  return sum / static_cast<double>(cm.n_classes());
}

MetricsReport MetricsReport::from_logits(const MatD& logits, const std::vector<int>& labels,
                                         int n_classes) {
  MetricsReport r;
  r.n_samples = logits.rows();
  r.top1 = topk_accuracy(logits, labels, 1);
  r.top5 = topk_accuracy(logits, labels, std::min(5, n_classes));
  r.confusion = ConfusionMatrix::from_predictions(labels, argmax_predictions(logits), n_classes);
  r.per_class_f1 = bdsl::per_class_f1(r.confusion);
  r.macro_f1 = bdsl::macro_f1(r.confusion);
  if (r.top5 < r.top1) {
    throw std::logic_error("metrics invariant violated: top5 < top1");
  }
  return r;
}

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["n_samples"] = report.n_samples;
  j["top1"] = report.top1;
  j["top5"] = report.top5;
  j["macro_f1"] = report.macro_f1;
  j["per_class_f1"] = report.per_class_f1;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics: " + path.string());
  out << j.dump(2) << '\n';
}

void write_confusion_tsv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write confusion matrix: " + path.string());
  for (int i = 0; i < cm.n_classes(); ++i) {
    for (int j = 0; j < cm.n_classes(); ++j) {
      out << cm.at(i, j);
      out << (j + 1 < cm.n_classes() ? '\t' : '\n');
    }
  }
}

void write_confusion_pgm(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write confusion image: " + path.string());
  const int c = cm.n_classes();
  out << "P5\n" << c << ' ' << c << "\n255\n";
  for (int i = 0; i < c; ++i) {
    const auto support = static_cast<double>(cm.row_sum(i));
    for (int j = 0; j < c; ++j) {
      const double frac = support > 0.0 ? static_cast<double>(cm.at(i, j)) / support : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * frac))));
    }
  }
}

std::vector<std::vector<std::string>> partition_signers_kfold(const std::vector<SignSample>& samples,
                                                              int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw UsageError("cross-validation needs at least 2 folds");
  std::vector<std::string> signers;  // first-appearance order
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.signer_id).second) signers.push_back(s.signer_id);
  }
  if (static_cast<int>(signers.size()) < k_folds) {
    throw DataError(strformat("cross-validation needs at least %d distinct signers, got %zu", k_folds,
                              signers.size()));
  }
  Rng rng(seed);
  rng.shuffle(signers);
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k_folds));
  for (std::size_t i = 0; i < signers.size(); ++i) {
    folds[i % static_cast<std::size_t>(k_folds)].push_back(signers[i]);
  }
  return folds;
}

CVResult cross_validate(const std::vector<SignSample>& samples, int k_folds, std::uint64_t seed,
                        const FoldRunner& runner,
                        const std::optional<std::vector<double>>& baseline_accuracies) {
  const auto folds = partition_signers_kfold(samples, k_folds, seed);
  CVResult result;
  for (int f = 0; f < k_folds; ++f) {
    std::set<std::string> eval_signers(folds[static_cast<std::size_t>(f)].begin(),
                                       folds[static_cast<std::size_t>(f)].end());
    std::vector<const SignSample*> train_set;
    std::vector<const SignSample*> eval_set;
    for (const auto& s : samples) {
      (eval_signers.count(s.signer_id) != 0 ? eval_set : train_set).push_back(&s);
    }
    result.fold_accuracies.push_back(runner(train_set, eval_set, f));
  }

  const auto k = static_cast<double>(k_folds);
  double sum = 0.0;
  for (double a : result.fold_accuracies) sum += a;
  result.mean = sum / k;
  double ss = 0.0;
  for (double a : result.fold_accuracies) ss += (a - result.mean) * (a - result.mean);
  result.stddev = std::sqrt(ss / (k - 1.0));
  const double half = 1.96 * result.stddev / std::sqrt(k);
  result.ci95 = {result.mean - half, result.mean + half};
  if (baseline_accuracies.has_value()) {
    result.cohens_d_vs_baseline = cohens_d(result.fold_accuracies, *baseline_accuracies);
  }
  return result;
}

double cohens_d(const std::vector<double>& group_a, const std::vector<double>& group_b) {
  const auto na = static_cast<double>(group_a.size());
  const auto nb = static_cast<double>(group_b.size());
  if (group_a.size() < 2 || group_b.size() < 2) {
    throw DataError("cohens_d: each group needs at least 2 values");
  }
  auto mean = [](const std::vector<double>& v, double n) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / n;
  };
  auto var = [](const std::vector<double>& v, double m, double n) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (n - 1.0);
  };
  const double ma = mean(group_a, na);
  const double mb = mean(group_b, nb);
  const double pooled =
      std::sqrt(((na - 1.0) * var(group_a, ma, na) + (nb - 1.0) * var(group_b, mb, nb)) / (na + nb - 2.0));
  if (pooled <= 0.0) throw DataError("cohens_d: pooled standard deviation is zero");
  return (ma - mb) / pooled;
}

ThroughputReport throughput_profile(const Model<float>& model, int n_warmup, int n_timed,
                                    std::uint64_t seed) {
  if (n_timed < 10) throw UsageError("throughput_profile: n_timed must be >= 10");
  const ModelConfig& cfg = model.config();
  Rng rng(seed);
  MatF input(cfg.seq_len, cfg.d_model);
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    input.data()[i] = static_cast<float>(rng.normal(0.0, 1.0));
  }

  float acc = 0.0f;
  for (int i = 0; i < n_warmup; ++i) acc += model.forward_one(input)(0, 0);

  std::vector<double> latencies_ms(static_cast<std::size_t>(n_timed));
  for (int i = 0; i < n_timed; ++i) {
    Stopwatch sw;
    acc += model.forward_one(input)(0, 0);
    latencies_ms[static_cast<std::size_t>(i)] = sw.millis();
  }
  volatile float sink = acc;  // keeps the timed loops from being elided
  (void)sink;

  ThroughputReport r;
  double sum = 0.0;
  for (double v : latencies_ms) sum += v;
  r.mean_latency_ms = sum / static_cast<double>(n_timed);
  std::vector<double> sorted(latencies_ms);
  std::sort(sorted.begin(), sorted.end());
  const auto p95_rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(n_timed)));  // nearest-rank percentile
  r.p95_latency_ms = sorted[std::min(p95_rank, sorted.size()) - 1];
  r.fps = 1000.0 / r.mean_latency_ms;
  r.n_timed = n_timed;
  r.parameters = param_count(cfg);
  r.flops_macs = flops_estimate(cfg);
  r.flops_text = flops_formula(cfg);

  // Working set: parameters plus the dominant per-layer activations at full T.
  const auto t = static_cast<std::uint64_t>(cfg.seq_len);
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto ff = static_cast<std::uint64_t>(cfg.d_ff);
  const std::uint64_t acts = static_cast<std::uint64_t>(cfg.n_layers) *
                                 (7 * t * d + 2 * t * ff + static_cast<std::uint64_t>(cfg.n_heads) * t * t) +
                             t * d;
  r.working_set_bytes = (r.parameters + acts) * sizeof(float);
  return r;
}

}  // namespace bdsl
