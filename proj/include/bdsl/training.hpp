#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "bdsl/common.hpp"
#include "bdsl/nn.hpp"
#include "bdsl/pose_data.hpp"
#include "bdsl/preprocess.hpp"

namespace bdsl {

struct TrainConfig {
  int max_epochs = 20;
  int patience = 5;
  int batch_size = 32;
  double label_smoothing_eps = 0.1;
  double weight_decay = 1e-4;
  double max_lr = 1e-3;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  std::vector<int> curriculum_lengths = {80, 140, 200};
  std::uint64_t seed = 42;

  // Throws UsageError unless patience <= max_epochs and curriculum_lengths is
  // non-decreasing with last element equal to the model's seq_len.
  void validate(int model_seq_len) const;

  bool operator==(const TrainConfig&) const = default;
};

// Label-smoothed cross entropy over a batch of logits.  Target distribution
// q = (1-eps)*onehot + eps/C; loss is the batch mean of -sum_j q_j log p_j;
// gradient is (softmax(logits) - q)/B.
template <typename S>
struct LossResult {
  S loss = S(0);
  Mat<S> dlogits;
};

template <typename S>
LossResult<S> label_smoothing_loss(const Mat<S>& logits, const std::vector<int>& labels, double eps) {
  const auto b = logits.rows();
  const auto c = logits.cols();
  if (b < 1 || static_cast<Eigen::Index>(labels.size()) != b) {
    throw UsageError("label_smoothing_loss: batch size mismatch between logits and labels");
  }
  if (eps < 0.0 || eps >= 1.0) throw UsageError("label_smoothing_loss: eps must lie in [0, 1)");
  if (!logits.allFinite()) throw DataError("label_smoothing_loss: non-finite logits");

  LossResult<S> result;
  result.dlogits.resize(b, c);
  S total = S(0);
  const S uniform_q = static_cast<S>(eps) / static_cast<S>(c);
  const S on_q = static_cast<S>(1.0 - eps);
  for (Eigen::Index i = 0; i < b; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) {
      throw DataError(strformat("label_smoothing_loss: label %d outside [0, %ld)", label,
                                static_cast<long>(c)));
    }
    const S row_max = logits.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> shifted = logits.row(i).array() - row_max;
    const S log_z = std::log(shifted.exp().sum());
    Eigen::Array<S, 1, Eigen::Dynamic> log_p = shifted - log_z;
    total += -(uniform_q * log_p.sum() + on_q * log_p(label));
    Eigen::Array<S, 1, Eigen::Dynamic> p = log_p.exp();
    p -= uniform_q;
    p(label) -= on_q;
    result.dlogits.row(i) = (p / static_cast<S>(b)).matrix();
  }
  result.loss = total / static_cast<S>(b);
  return result;
}

// One-cycle schedule: cosine warm-up from max_lr/div_factor to max_lr over the
// first round(pct_start*total_steps) steps, then cosine anneal down to
// max_lr/final_div_factor at total_steps.  Endpoint values are exact.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// curriculum_lengths[min(epoch, len-1)].
int curriculum_length(int epoch, const TrainConfig& cfg);

// Adaptive moment estimation with decoupled weight decay
// (beta1 0.9, beta2 0.999, eps 1e-8).  Moment slots follow canonical tensor
// order.  LayerNorm gains/biases and the positional table are never decayed;
// a non-trainable positional table (sinusoidal/fixed_random) is never updated.
template <typename S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  std::int64_t t = 0;

  static AdamState init(const ModelParams<S>& params) {
    AdamState st;
    params.for_each([&](const std::string&, const Mat<S>& p) {
      st.m.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      st.v.push_back(Mat<S>::Zero(p.rows(), p.cols()));
    });
    return st;
  }
};

template <typename S>
void optimizer_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state,
                    double lr, double weight_decay, const ModelConfig& cfg) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  auto p_list = params.tensor_list();
  auto g_list = grads.tensor_list();
  if (p_list.size() != g_list.size() || p_list.size() != state.m.size()) {
    throw UsageError("optimizer_step: parameter/gradient/state tensor counts differ");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < p_list.size(); ++i) {
    const std::string& name = p_list[i].first;
    Mat<S>& p = *p_list[i].second;
    const Mat<S>& g = *g_list[i].second;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw UsageError("optimizer_step: gradient shape mismatch for tensor '" + name + "'");
    }
    if (!g.allFinite()) throw DataError("optimizer_step: non-finite gradient in tensor '" + name + "'");
    if (name == "pos_table" && !cfg.pos_trainable()) continue;

    Mat<S>& m = state.m[i];
    Mat<S>& v = state.v[i];
    m = S(kBeta1) * m + S(1.0 - kBeta1) * g;
    v = (S(kBeta2) * v.array() + S(1.0 - kBeta2) * g.array().square()).matrix();
    p.array() -= static_cast<S>(lr) *
                 ((m.array() / S(bc1)) / ((v.array() / S(bc2)).sqrt() + S(kEps)));
    if (weight_decay != 0.0 && !is_decay_exempt(name)) {
      p.array() -= static_cast<S>(lr) * static_cast<S>(weight_decay) * p.array();
    }
  }
}

struct EarlyStopState {
  double best_val_top1 = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_since_improvement = 0;

  // Returns true when this epoch strictly improved on the best value
  // (ties keep the earlier epoch).
  bool update(double val_top1, int epoch) {
    if (val_top1 > best_val_top1) {
      best_val_top1 = val_top1;
      best_epoch = epoch;
      epochs_since_improvement = 0;
      return true;
    }
    ++epochs_since_improvement;
    return false;
  }

  bool should_stop(int patience) const { return epochs_since_improvement > patience; }
};

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;
  int curriculum_len = 0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  void write_tsv(const std::filesystem::path& path) const;
};

struct FitResult {
  ModelParams<float> best_params;
  int best_epoch = -1;
  double best_val_top1 = 0.0;
  TrainLog log;
  std::vector<double> step_train_losses;  // one value per optimizer step
};

// Full training loop: per-epoch deterministic shuffle by (seed, epoch),
// curriculum resample length, augmented batches, validation at full seq_len
// with augmentation off, best-val-Top-1 checkpointing (ties keep the earlier
// epoch), early stop when epochs_since_improvement exceeds patience.
// Deterministic for a given seed regardless of worker count.
FitResult fit(const std::vector<const SignSample*>& train_set,
              const std::vector<const SignSample*>& val_set, Model<float>& model,
              const TrainConfig& tcfg, const PreprocessConfig& pcfg, int workers);

// Inference-mode logits (double) for a sample set: N x n_classes, aug off,
// full seq_len resampling.
MatD predict_logits(const Model<float>& model, const std::vector<const SignSample*>& samples,
                    const PreprocessConfig& pcfg, int workers);

// Central finite differences in extended precision (long double) against the
// analytic backward pass, dropout masks frozen by reseeding per forward.
struct GradCheckResult {
  struct Entry {
    std::string tensor;
    double max_rel_err = 0.0;
  };
  std::vector<Entry> per_tensor;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  double elapsed_seconds = 0.0;
};

GradCheckResult gradient_check(const ModelConfig& cfg, double tolerance,
                               std::uint64_t seed = 20240816, double fd_step = 1e-5);

}  // namespace bdsl
