#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bdsl/run_config.hpp"

namespace {

using bdsl::RunConfig;

// The config file is applied before flag binding so flags override file
// values; this pre-scan finds it without committing to the full grammar.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

struct FlagBindings {
  std::string encoding_type;
  std::string normalization_mode;
};

void bind_run_config_flags(CLI::App& app, RunConfig& rc, FlagBindings& fb) {
  app.add_option("--seed", rc.seed, "Run seed (training, splits, synthesis)");
  app.add_option("--workers", rc.workers, "Worker threads (0 = all processors)");

  app.add_option("--model.d-model", rc.model.d_model, "Embedding width");
  app.add_option("--model.n-layers", rc.model.n_layers, "Encoder layers");
  app.add_option("--model.n-heads", rc.model.n_heads, "Attention heads");
  app.add_option("--model.d-ff", rc.model.d_ff, "Feed-forward width");
  app.add_option("--model.seq-len", rc.model.seq_len, "Resampled sequence length");
  app.add_option("--model.n-classes", rc.model.n_classes, "Output classes");
  app.add_option("--model.head-hidden", rc.model.head_hidden, "Classifier hidden widths")
      ->delimiter(',');
  app.add_option("--model.dropout-p", rc.model.dropout_p, "Dropout probability");
  fb.encoding_type = bdsl::encoding_type_name(rc.model.encoding_type);
  app.add_option("--model.encoding-type", fb.encoding_type, "Positional encoding")
      ->check(CLI::IsMember({"learnable", "sinusoidal", "fixed_random"}));

  app.add_option("--train.max-epochs", rc.train.max_epochs, "Epoch budget");
  app.add_option("--train.patience", rc.train.patience, "Early-stop patience");
  app.add_option("--train.batch-size", rc.train.batch_size, "Batch size");
  app.add_option("--train.label-smoothing-eps", rc.train.label_smoothing_eps, "Smoothing mass");
  app.add_option("--train.weight-decay", rc.train.weight_decay, "Decoupled weight decay");
  app.add_option("--train.max-lr", rc.train.max_lr, "One-cycle peak learning rate");
  app.add_option("--train.pct-start", rc.train.pct_start, "Warm-up fraction of steps");
  app.add_option("--train.div-factor", rc.train.div_factor, "Initial LR divisor");
  app.add_option("--train.final-div-factor", rc.train.final_div_factor, "Final LR divisor");
  app.add_option("--train.curriculum-lengths", rc.train.curriculum_lengths,
                 "Per-epoch resample lengths")
      ->delimiter(',');

  fb.normalization_mode = bdsl::normalization_mode_name(rc.preprocess.mode);
  app.add_option("--preprocess.normalization-mode", fb.normalization_mode,
                 "signing_box or standard")
      ->check(CLI::IsMember({"signing_box", "standard"}));
  app.add_option("--preprocess.alpha", rc.preprocess.alpha, "Signing-box shrink factor");
  app.add_option("--preprocess.augment", rc.preprocess.augment.enabled,
                 "Enable training augmentation");
  app.add_option("--preprocess.hflip-probability", rc.preprocess.augment.hflip_probability,
                 "Horizontal flip probability");
  app.add_option("--preprocess.noise-sigma", rc.preprocess.augment.noise_sigma,
                 "Keypoint noise sigma (px)");
  app.add_option("--preprocess.temporal-dropout-rate", rc.preprocess.augment.temporal_dropout_rate,
                 "Fraction of frames dropped");

  app.add_option("--synth.n-classes", rc.synth.n_classes, "Synthetic classes");
  app.add_option("--synth.n-signers", rc.synth.n_signers, "Synthetic signers");
  app.add_option("--synth.samples-per-class-per-signer", rc.synth.samples_per_class_per_signer,
                 "Takes per class per signer");
  app.add_option("--synth.frame-min", rc.synth.frame_range.first, "Minimum frames per sample");
  app.add_option("--synth.frame-max", rc.synth.frame_range.second, "Maximum frames per sample");
  app.add_option("--synth.trajectory-noise", rc.synth.trajectory_noise, "Keypoint jitter (px)");
  app.add_option("--synth.hand-dropout-prob", rc.synth.hand_dropout_prob,
                 "Chance of a hidden-hand span");
  app.add_option("--synth.image-width", rc.synth.image_width, "Frame width (px)");
  app.add_option("--synth.image-height", rc.synth.image_height, "Frame height (px)");
  app.add_option("--synth.fps", rc.synth.fps, "Frame rate");
}

void apply_enum_flags(RunConfig& rc, const FlagBindings& fb) {
  rc.model.encoding_type = bdsl::encoding_type_from_name(fb.encoding_type);
  rc.preprocess.mode = bdsl::normalization_mode_from_name(fb.normalization_mode);
  rc.resolve();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-sequence sign recognition pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // config flags may follow the subcommand name

  RunConfig rc;
  std::string config_path_echo;  // registered so --config shows in help
  app.add_option("--config", config_path_echo, "JSON run configuration file");

  try {
    const std::string config_path = find_config_arg(argc, argv);
    if (!config_path.empty()) rc = bdsl::load_run_config(config_path);
  } catch (const bdsl::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  FlagBindings fb;
  bind_run_config_flags(app, rc, fb);

  std::string samples_path, vocab_path, checkpoint_path, out_dir;
  int top_k = 5;
  int k_folds = 5;
  int n_warmup = 10;
  int n_timed = 50;
  bool pgm = false;
  std::vector<double> baseline;

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic gesture benchmark");
  synth->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* preprocess = app.add_subcommand("preprocess", "Write feature shards for a sample file");
  preprocess->add_option("--samples", samples_path, "Sample JSONL file")->required();
  preprocess->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  preprocess->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train on a speaker-disjoint split");
  train->add_option("--samples", samples_path, "Sample JSONL file")->required();
  train->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  train->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a sample file");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--samples", samples_path, "Sample JSONL file")->required();
  eval->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  eval->add_option("--out", out_dir, "Output directory")->required();
  eval->add_flag("--pgm", pgm, "Also render the confusion matrix as PGM");

  CLI::App* infer = app.add_subcommand("infer", "Rank classes for each sample");
  infer->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  infer->add_option("--samples", samples_path, "Sample JSONL file")->required();
  infer->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  infer->add_option("--out", out_dir, "Output directory")->required();
  infer->add_option("--top-k", top_k, "Ranks to report per sample");

  CLI::App* profile = app.add_subcommand("profile", "Measure single-sequence inference speed");
  profile->add_option("--checkpoint", checkpoint_path, "Checkpoint file (default: config model)");
  profile->add_option("--out", out_dir, "Output directory")->required();
  profile->add_option("--warmup", n_warmup, "Warm-up iterations");
  profile->add_option("--timed", n_timed, "Timed iterations");

  CLI::App* xval = app.add_subcommand("xval", "Signer-disjoint K-fold cross-validation");
  xval->add_option("--samples", samples_path, "Sample JSONL file")->required();
  xval->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  xval->add_option("--out", out_dir, "Output directory")->required();
  xval->add_option("--folds", k_folds, "Number of folds");
  xval->add_option("--baseline", baseline, "Baseline fold accuracies for Cohen's d")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc_exit = app.exit(e);
    return rc_exit == 0 ? 0 : 1;  // --help exits 0; any parse failure is a usage error
  }

  try {
    apply_enum_flags(rc, fb);
    if (synth->parsed()) {
      bdsl::cmd_synth(rc, out_dir);
    } else if (preprocess->parsed()) {
      bdsl::cmd_preprocess(rc, samples_path, vocab_path, out_dir);
    } else if (train->parsed()) {
      bdsl::cmd_train(rc, samples_path, vocab_path, out_dir);
    } else if (eval->parsed()) {
      bdsl::cmd_eval(rc, checkpoint_path, samples_path, vocab_path, out_dir, pgm);
    } else if (infer->parsed()) {
      bdsl::cmd_infer(rc, checkpoint_path, samples_path, vocab_path, out_dir, top_k);
    } else if (profile->parsed()) {
      const bdsl::ThroughputReport rep =
          bdsl::cmd_profile(rc, checkpoint_path, out_dir, n_warmup, n_timed);
      std::printf("parameters\t%llu\n", static_cast<unsigned long long>(rep.parameters));
      std::printf("flops_macs\t%llu\n", static_cast<unsigned long long>(rep.flops_macs));
      std::printf("flops_text\t%s\n", rep.flops_text.c_str());
      std::printf("mean_latency_ms\t%.6f\n", rep.mean_latency_ms);
      std::printf("p95_latency_ms\t%.6f\n", rep.p95_latency_ms);
      std::printf("fps\t%.3f\n", rep.fps);
      std::printf("n_timed\t%d\n", rep.n_timed);
      std::printf("working_set_bytes\t%llu\n",
                  static_cast<unsigned long long>(rep.working_set_bytes));
    } else if (xval->parsed()) {
      bdsl::cmd_xval(rc, samples_path, vocab_path, out_dir, k_folds, baseline);
    }
  } catch (const bdsl::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const bdsl::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
  return 0;
}
