#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdsl/common.hpp"
#include "bdsl/nn.hpp"
#include "bdsl/pose_data.hpp"

namespace bdsl {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n_classes)
      : n_classes_(n_classes),
        counts_(static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(n_classes), 0) {}

  static ConfusionMatrix from_predictions(const std::vector<int>& labels,
                                          const std::vector<int>& predictions, int n_classes);

  int n_classes() const { return n_classes_; }
  std::int64_t& at(int true_class, int predicted_class);
  std::int64_t at(int true_class, int predicted_class) const;
  std::int64_t row_sum(int true_class) const;   // support of the class
  std::int64_t col_sum(int predicted_class) const;
  std::int64_t total() const;

 private:
  int n_classes_ = 0;
  std::vector<std::int64_t> counts_;  // row-major, rows = true class
};

// Fraction of rows whose true label ranks among the k best logits; logit ties
// rank the lower class index first.  Throws UsageError on empty input or
// k outside [1, C].
double topk_accuracy(const MatD& logits, const std::vector<int>& labels, int k);

// Per-row argmax with the same tie-break (lowest index wins).
std::vector<int> argmax_predictions(const MatD& logits);

// Per-class F1 with the zero-denominator-means-zero convention.
std::vector<double> per_class_f1(const ConfusionMatrix& confusion);
double macro_f1(const ConfusionMatrix& confusion);

struct MetricsReport {
  double top1 = 0.0;
  double top5 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ConfusionMatrix confusion;
  std::int64_t n_samples = 0;

  static MetricsReport from_logits(const MatD& logits, const std::vector<int>& labels, int n_classes);
};

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
void write_confusion_tsv(const ConfusionMatrix& confusion, const std::filesystem::path& path);
// Row-normalized grayscale rendering (P5, one pixel per matrix cell).
void write_confusion_pgm(const ConfusionMatrix& confusion, const std::filesystem::path& path);

struct CVResult {
  std::vector<double> fold_accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n-1)
  std::pair<double, double> ci95{0.0, 0.0};
  std::optional<double> cohens_d_vs_baseline;
};

// Deterministic signer partition: shuffled by seed, dealt round-robin into K
// folds.  Throws DataError with fewer distinct signers than folds.
std::vector<std::vector<std::string>> partition_signers_kfold(const std::vector<SignSample>& samples,
                                                              int k_folds, std::uint64_t seed);

// Runs one train/eval round per fold via the supplied runner (train samples,
// held-out fold samples, fold index) -> accuracy.  ci95 = mean +/- 1.96*SE.
using FoldRunner = std::function<double(const std::vector<const SignSample*>&,
                                        const std::vector<const SignSample*>&, int)>;
CVResult cross_validate(const std::vector<SignSample>& samples, int k_folds, std::uint64_t seed,
                        const FoldRunner& runner,
                        const std::optional<std::vector<double>>& baseline_accuracies = std::nullopt);

// (mean_a - mean_b) / pooled_std.  Throws DataError when pooled std is zero
// or either group has fewer than 2 values.
double cohens_d(const std::vector<double>& group_a, const std::vector<double>& group_b);

struct ThroughputReport {
  double mean_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double fps = 0.0;
  int n_timed = 0;
  std::uint64_t parameters = 0;
  std::uint64_t flops_macs = 0;
  std::string flops_text;
  std::uint64_t working_set_bytes = 0;
};

// Times single-sequence inference (full seq_len, deterministic random input)
// after warm-up.  fps = 1000/mean_latency_ms.  Requires n_timed >= 10.
ThroughputReport throughput_profile(const Model<float>& model, int n_warmup, int n_timed,
                                    std::uint64_t seed);

}  // namespace bdsl
