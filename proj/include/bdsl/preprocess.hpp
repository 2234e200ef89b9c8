#pragma once

#include <array>
#include <utility>
#include <vector>

#include "bdsl/common.hpp"
#include "bdsl/pose_data.hpp"
#include "bdsl/rng.hpp"

namespace bdsl {

struct NormalizationParams {
  double alpha = 0.85;   // signing-space shrink factor
  double center_x = 0.0; // pixels
  double center_y = 0.0;
  double box_w = 1.0;    // pixels, > 0
  double box_h = 1.0;
};

struct AugmentationConfig {
  double temporal_dropout_rate = 0.10;  // fraction of frames removed, [0,1)
  double noise_sigma = 2.0;             // pixels
  double hflip_probability = 0.5;
  bool enabled = true;  // honored by training; inference paths force it off
};

// How the normalization box is chosen.  kBdslBox: one box over the whole
// sequence, shrunk by alpha (default 0.85).  kStandard: per-frame box with
// alpha forced to 1.0, approximating conventional signing-space normalization.
enum class NormalizationMode { kBdslBox, kStandard };

struct PreprocessConfig {
  int target_len = 200;  // output rows T
  NormalizationMode mode = NormalizationMode::kBdslBox;
  double alpha = 0.85;   // used by kBdslBox; kStandard pins 1.0
  AugmentationConfig augment;
};

struct FeatureSequence {
  MatD data;  // target_len x 108, normalized coordinates, (x,y) pairs in landmark order
};

// Fills invalid landmarks per index: most recent valid value, else the next
// valid value, else zeros.  Output landmarks are all marked valid.
std::vector<PoseFrame> repair_missing(const std::vector<PoseFrame>& frames);

// Axis-aligned bounding box over every landmark of every (repaired) frame.
// A degenerate extent is replaced by 1.0 pixel.  Throws DataError when empty.
NormalizationParams compute_signing_box(const std::vector<PoseFrame>& frames, double alpha);

// x' = (x - center_x)/(alpha*box_w), y' = (y - center_y)/(alpha*box_h).
std::vector<PoseFrame> normalize_signing_space(const std::vector<PoseFrame>& frames,
                                               const NormalizationParams& params);

// Per-column linear interpolation at t_i = i*(L-1)/(T-1); T=1 takes frame 0,
// L=1 broadcasts.  Integer sample positions copy rows exactly.
MatD resample_temporal(const MatD& frames, int target_len);

// Removes exactly round(rate*L) frames uniformly without replacement,
// preserving order.  L < 2 is returned unchanged.
MatD temporal_dropout(const MatD& frames, double rate, Rng& rng);

// Independent zero-mean Gaussian noise on every coordinate, pixel space.
std::vector<PoseFrame> coordinate_noise(const std::vector<PoseFrame>& frames, double sigma, Rng& rng);

// Mirror pairing for the 12 body landmarks: (right eye, left eye), (right ear,
// left ear), (right shoulder, left shoulder), (right elbow, left elbow),
// (right wrist, left wrist).  Nose (0) and neck (1) sit on the mirror axis.
extern const std::array<std::pair<int, int>, 5> kBodyFlipPairs;

// x <- image_width - x; left/right hand blocks swapped; paired body landmarks
// (eyes, ears, shoulders, elbows, wrists) swapped.
std::vector<PoseFrame> horizontal_flip(const std::vector<PoseFrame>& frames, int image_width);

// Indices of surviving frames after removing round(rate*length) uniformly
// chosen frames (ascending order).  Shared by the matrix and frame-list paths.
std::vector<int> temporal_dropout_indices(int length, double rate, Rng& rng);

// Flattens one frame to a 108-vector: columns (2k, 2k+1) = (x, y) of landmark k.
void flatten_frame(const PoseFrame& frame, double* out);

// Full pipeline: repair -> (augment: flip?/noise/temporal dropout) ->
// signing box -> normalize -> flatten -> resample to cfg.target_len.
// rng may be null when augmentation is disabled.
FeatureSequence preprocess_sample(const SignSample& sample, const PreprocessConfig& cfg, Rng* rng);

}  // namespace bdsl
