#include "bdsl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bdsl/eval_metrics.hpp"

namespace bdsl {

void TrainConfig::validate(int model_seq_len) const {
  if (max_epochs < 1) throw UsageError("train config: max_epochs must be >= 1");
  if (patience < 0 || patience > max_epochs) {
    throw UsageError("train config: patience must lie in [0, max_epochs]");
  }
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (label_smoothing_eps < 0.0 || label_smoothing_eps >= 1.0) {
    throw UsageError("train config: label_smoothing_eps must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw UsageError("train config: weight_decay must be >= 0");
  if (max_lr <= 0.0) throw UsageError("train config: max_lr must be positive");
  if (pct_start <= 0.0 || pct_start >= 1.0) throw UsageError("train config: pct_start must lie in (0, 1)");
  if (div_factor <= 0.0 || final_div_factor <= 0.0) {
    throw UsageError("train config: div factors must be positive");
  }
  if (curriculum_lengths.empty()) throw UsageError("train config: curriculum_lengths must be non-empty");
  for (std::size_t i = 0; i < curriculum_lengths.size(); ++i) {
    if (curriculum_lengths[i] < 1) throw UsageError("train config: curriculum lengths must be >= 1");
    if (i > 0 && curriculum_lengths[i] < curriculum_lengths[i - 1]) {
      throw UsageError("train config: curriculum_lengths must be non-decreasing");
    }
  }
  if (curriculum_lengths.back() != model_seq_len) {
    throw UsageError(strformat("train config: last curriculum length %d must equal model seq_len %d",
                               curriculum_lengths.back(), model_seq_len));
  }
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 2) throw UsageError("onecycle_lr: total_steps must be >= 2");
  if (step < 0 || step > total_steps) {
    throw UsageError(strformat("onecycle_lr: step %lld outside [0, %lld]",
                               static_cast<long long>(step), static_cast<long long>(total_steps)));
  }
  std::int64_t peak = std::llround(cfg.pct_start * static_cast<double>(total_steps));
  peak = std::clamp<std::int64_t>(peak, 1, total_steps - 1);
  const double lr_start = cfg.max_lr / cfg.div_factor;
  const double lr_end = cfg.max_lr / cfg.final_div_factor;
  if (step == 0) return lr_start;
  if (step == peak) return cfg.max_lr;
  if (step == total_steps) return lr_end;
  if (step < peak) {
    const double u = static_cast<double>(step) / static_cast<double>(peak);
    return cfg.max_lr + (lr_start - cfg.max_lr) * 0.5 * (1.0 + std::cos(M_PI * u));
  }
  const double u = static_cast<double>(step - peak) / static_cast<double>(total_steps - peak);
  return lr_end + (cfg.max_lr - lr_end) * 0.5 * (1.0 + std::cos(M_PI * u));
}

int curriculum_length(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw UsageError("curriculum_length: epoch must be >= 0");
  if (cfg.curriculum_lengths.empty()) throw UsageError("curriculum_length: empty curriculum");
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(epoch), cfg.curriculum_lengths.size() - 1);
  return cfg.curriculum_lengths[idx];
}

void TrainLog::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write train log: " + path.string());
  out << "epoch\ttrain_loss\tval_loss\tval_top1\tlr\tcurriculum_len\tseconds\n";
  for (const auto& e : entries) {
    out << strformat("%d\t%.9g\t%.9g\t%.9g\t%.9g\t%d\t%.3f\n", e.epoch, e.train_loss, e.val_loss,
                     e.val_top1, e.lr, e.curriculum_len, e.seconds);
  }
}

namespace {

void accumulate_params(ModelParams<float>& total, const ModelParams<float>& part) {
  auto t_list = total.tensor_list();
  auto p_list = part.tensor_list();
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    *t_list[i].second += *p_list[i].second;
  }
}

}  // namespace

MatD predict_logits(const Model<float>& model, const std::vector<const SignSample*>& samples,
                    const PreprocessConfig& pcfg, int workers) {
  PreprocessConfig eval_cfg = pcfg;
  eval_cfg.augment.enabled = false;
  eval_cfg.target_len = model.config().seq_len;
  MatD logits(static_cast<Eigen::Index>(samples.size()), model.config().n_classes);
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    FeatureSequence fs = preprocess_sample(*samples[i], eval_cfg, nullptr);
    MatF features = fs.data.cast<float>();
    logits.row(static_cast<Eigen::Index>(i)) = model.forward_one(features).cast<double>();
  });
  return logits;
}

FitResult fit(const std::vector<const SignSample*>& train_set,
              const std::vector<const SignSample*>& val_set, Model<float>& model,
              const TrainConfig& tcfg, const PreprocessConfig& pcfg, int workers) {
  if (train_set.empty() || val_set.empty()) throw DataError("fit: empty train or validation set");
  tcfg.validate(model.config().seq_len);

  const std::size_t n = train_set.size();
  const auto batch = static_cast<std::size_t>(tcfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total_steps = static_cast<std::int64_t>(tcfg.max_epochs) * steps_per_epoch;

  AdamState<float> adam = AdamState<float>::init(model.params());
  EarlyStopState stopper;
  FitResult result;
  result.best_params = model.params();

  std::vector<int> val_labels(val_set.size());
  for (std::size_t i = 0; i < val_set.size(); ++i) val_labels[i] = val_set[i]->label;

  // With one worker the per-sample buffers are pure overhead: accumulating
  // straight into grad_total in index order produces the same left-fold sum
  // bit for bit, since backward_one only ever adds independent increments.
  const bool direct_accumulate = resolved_workers(workers) == 1;
  std::vector<ModelParams<float>> sample_grads;
  if (!direct_accumulate) {
    sample_grads.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) sample_grads.push_back(ModelParams<float>::zeros(model.config()));
  }
  ModelParams<float> grad_total = ModelParams<float>::zeros(model.config());

  std::int64_t global_step = 0;
  for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    Stopwatch epoch_watch;
    const int cur_len = curriculum_length(epoch, tcfg);
    PreprocessConfig epoch_pcfg = pcfg;
    epoch_pcfg.target_len = cur_len;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(tcfg.seed, 0x45504F43ULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss_sum = 0.0;
    std::int64_t batches = 0;
    double last_lr = 0.0;

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t bsz = std::min(batch, n - start);
      std::vector<ForwardTrace<float>> traces(bsz);
      MatF logits(static_cast<Eigen::Index>(bsz), model.config().n_classes);
      std::vector<int> labels(bsz);

      parallel_for(bsz, workers, [&](std::size_t j) {
        const std::size_t ds_index = order[start + j];
        const SignSample& sample = *train_set[ds_index];
        // One stream per (seed, epoch, dataset index): augmentation and
        // dropout draws are independent of batch shape and worker count.
        Rng rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch), ds_index));
        FeatureSequence fs = preprocess_sample(sample, epoch_pcfg, &rng);
        MatF features = fs.data.cast<float>();
        logits.row(static_cast<Eigen::Index>(j)) = model.forward_one(features, true, &rng, &traces[j]);
        labels[j] = sample.label;
      });

      LossResult<float> loss = label_smoothing_loss<float>(logits, labels, tcfg.label_smoothing_eps);
      epoch_loss_sum += static_cast<double>(loss.loss);
      result.step_train_losses.push_back(static_cast<double>(loss.loss));

      grad_total.set_zero();
      if (direct_accumulate) {
        for (std::size_t j = 0; j < bsz; ++j) {
          MatF dlogit_row = loss.dlogits.row(static_cast<Eigen::Index>(j));
          model.backward_one(traces[j], dlogit_row, grad_total);
        }
      } else {
        parallel_for(bsz, workers, [&](std::size_t j) {
          sample_grads[j].set_zero();
          MatF dlogit_row = loss.dlogits.row(static_cast<Eigen::Index>(j));
          model.backward_one(traces[j], dlogit_row, sample_grads[j]);
        });
        for (std::size_t j = 0; j < bsz; ++j) accumulate_params(grad_total, sample_grads[j]);
      }

      last_lr = onecycle_lr(global_step, total_steps, tcfg);
      optimizer_step(model.params(), grad_total, adam, last_lr, tcfg.weight_decay, model.config());
      ++global_step;
      ++batches;
    }

    MatD val_logits = predict_logits(model, val_set, pcfg, workers);
    const double val_top1 = topk_accuracy(val_logits, val_labels, 1);
    const double val_loss =
        static_cast<double>(label_smoothing_loss<double>(val_logits, val_labels, tcfg.label_smoothing_eps).loss);

    const bool improved = stopper.update(val_top1, epoch);
    if (improved) {
      result.best_params = model.params();
      result.best_epoch = epoch;
      result.best_val_top1 = val_top1;
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss_sum / static_cast<double>(batches);
    entry.val_loss = val_loss;
    entry.val_top1 = val_top1;
    entry.lr = last_lr;
    entry.curriculum_len = cur_len;
    entry.seconds = epoch_watch.seconds();
    result.log.entries.push_back(entry);
    log_info(strformat("epoch %d: train_loss %.4f val_loss %.4f val_top1 %.4f len %d lr %.3g (%.1fs)",
                       epoch, entry.train_loss, val_loss, val_top1, cur_len, last_lr, entry.seconds));

    if (stopper.should_stop(tcfg.patience)) {
      log_info(strformat("early stop after epoch %d (no improvement for %d epochs)", epoch,
                         stopper.epochs_since_improvement));
      break;
    }
  }
  return result;
}

GradCheckResult gradient_check(const ModelConfig& cfg, double tolerance, std::uint64_t seed,
                               double fd_step) {
  Stopwatch watch;
  using S = long double;
  if (param_count(cfg) > 50000) {
    throw UsageError("gradient_check: config too large for finite differences (> 5e4 parameters)");
  }
  Model<S> model(cfg);
  Rng init_rng(seed);
  model.init(init_rng);

  Rng data_rng(mix_seed(seed, 0xDA7AULL));
  Mat<S> features(cfg.seq_len, cfg.d_model);
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    features.data()[i] = static_cast<S>(data_rng.normal(0.0, 1.0));
  }
  const std::vector<int> labels{data_rng.uniform_int(0, cfg.n_classes - 1)};
  const std::uint64_t mask_seed = mix_seed(seed, 0x3A5CULL);
  const double eps = 0.1;

  auto eval_loss = [&]() -> S {
    Rng mask_rng(mask_seed);  // identical dropout masks on every evaluation
    Mat<S> logits = model.forward_one(features, true, &mask_rng, nullptr);
    return label_smoothing_loss<S>(logits, labels, eps).loss;
  };

  ModelParams<S> grads = ModelParams<S>::zeros(cfg);
  {
    Rng mask_rng(mask_seed);
    ForwardTrace<S> trace;
    Mat<S> logits = model.forward_one(features, true, &mask_rng, &trace);
    LossResult<S> loss = label_smoothing_loss<S>(logits, labels, eps);
    model.backward_one(trace, loss.dlogits, grads);
  }

  GradCheckResult result;
  result.tolerance = tolerance;
  const S h = static_cast<S>(fd_step);
  auto p_list = model.params().tensor_list();
  auto g_list = grads.tensor_list();
  for (std::size_t ti = 0; ti < p_list.size(); ++ti) {
    Mat<S>& p = *p_list[ti].second;
    const Mat<S>& g = *g_list[ti].second;
    double tensor_max = 0.0;
    for (Eigen::Index e = 0; e < p.size(); ++e) {
      const S original = p.data()[e];
      p.data()[e] = original + h;
      const S f_plus = eval_loss();
      p.data()[e] = original - h;
      const S f_minus = eval_loss();
      p.data()[e] = original;
      const S fd = (f_plus - f_minus) / (2 * h);
      const S an = g.data()[e];
      const double denom =
          std::max({std::abs(static_cast<double>(fd)), std::abs(static_cast<double>(an)), 1e-8});
      const double rel = std::abs(static_cast<double>(fd - an)) / denom;
      tensor_max = std::max(tensor_max, rel);
    }
    result.per_tensor.push_back({p_list[ti].first, tensor_max});
    result.max_rel_err = std::max(result.max_rel_err, tensor_max);
  }
  result.passed = result.max_rel_err < tolerance;
  result.elapsed_seconds = watch.seconds();
  return result;
}

}  // namespace bdsl
