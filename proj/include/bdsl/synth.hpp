#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "bdsl/pose_data.hpp"

namespace bdsl {

// Parameters for the synthetic gesture benchmark.  Each class is a distinct
// hand-path template (shape x cycle count x anchor/handedness variant); each
// signer applies a fixed similarity transform plus skeleton proportions, so a
// model that normalizes signing space correctly generalizes across signers.
struct SyntheticSpec {
  int n_classes = 60;
  int n_signers = 18;
  int samples_per_class_per_signer = 10;
  std::pair<int, int> frame_range{50, 170};
  double trajectory_noise = 3.0;  // pixel-level Gaussian jitter per landmark
  double hand_dropout_prob = 0.08;  // chance a sample hides one hand for a span
  int image_width = 640;
  int image_height = 480;
  double fps = 30.0;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<SignSample> samples;  // ordered by (class, signer, take)
  LabelVocab vocab;
};

// Deterministic by (spec, seed); all coordinates are integer pixel values.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Generates and writes samples.jsonl + vocab.txt under out_dir.
void write_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& out_dir);

}  // namespace bdsl
