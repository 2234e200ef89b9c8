#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdsl/eval_metrics.hpp"
#include "bdsl/nn.hpp"
#include "bdsl/preprocess.hpp"
#include "bdsl/synth.hpp"
#include "bdsl/training.hpp"

namespace bdsl {

std::string normalization_mode_name(NormalizationMode mode);
NormalizationMode normalization_mode_from_name(const std::string& name);  // throws UsageError

// Fully merged run configuration.  `seed` is the single seed for the whole
// run (training, splits, synthesis); `resolve()` pushes it plus the model
// sequence length into the member configs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PreprocessConfig preprocess;
  SyntheticSpec synth;
  std::uint64_t seed = 42;
  int workers = 0;  // 0 = all processors

  void resolve() {
    train.seed = seed;
    preprocess.target_len = model.seq_len;
  }
};

nlohmann::ordered_json run_config_to_json(const RunConfig& rc);
// Missing fields keep defaults; malformed values are data errors.
RunConfig run_config_from_json(const nlohmann::ordered_json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Writes resolved_config.json into out_dir (created when missing).
void echo_resolved_config(const RunConfig& rc, const std::filesystem::path& out_dir);

// Subcommand bodies.  They create out_dir, write their artifacts plus the
// resolved config echo, and log a one-line summary.
void cmd_synth(const RunConfig& rc, const std::filesystem::path& out_dir);

void cmd_preprocess(const RunConfig& rc, const std::filesystem::path& samples_path,
                    const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir);

// Trains on a speaker-disjoint 0.7/0.15/0.15 split; the model's class count is
// taken from the vocabulary.  Returns held-out test Top-1.
double cmd_train(const RunConfig& rc, const std::filesystem::path& samples_path,
                 const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir);

MetricsReport cmd_eval(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
                       const std::filesystem::path& samples_path,
                       const std::filesystem::path& vocab_path,
                       const std::filesystem::path& out_dir, bool write_pgm);

void cmd_infer(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& samples_path, const std::filesystem::path& vocab_path,
               const std::filesystem::path& out_dir, int top_k);

// checkpoint_path may be empty: profiles rc.model instead.
ThroughputReport cmd_profile(const RunConfig& rc, const std::filesystem::path& checkpoint_path,
                             const std::filesystem::path& out_dir, int n_warmup, int n_timed);

CVResult cmd_xval(const RunConfig& rc, const std::filesystem::path& samples_path,
                  const std::filesystem::path& vocab_path, const std::filesystem::path& out_dir,
                  int k_folds, const std::vector<double>& baseline_accuracies);

}  // namespace bdsl
