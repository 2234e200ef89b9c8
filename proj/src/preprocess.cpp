#include "bdsl/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bdsl {

std::vector<PoseFrame> repair_missing(const std::vector<PoseFrame>& frames) {
  if (frames.empty()) throw DataError("repair_missing: empty frame list");
  const std::size_t n = frames.size();
  std::vector<PoseFrame> out(frames);
  for (int k = 0; k < kNumLandmarks; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    // Forward: carry the most recent valid value.
    Landmark last{};
    bool have_last = false;
    for (std::size_t t = 0; t < n; ++t) {
      Landmark& lm = out[t].landmarks[idx];
      if (lm.valid) {
        last = lm;
        have_last = true;
      } else if (have_last) {
        lm = last;
      }
    }
    // Backward: leading gap takes the next valid value; never-valid stays (0,0).
    Landmark next{};
    bool have_next = false;
    for (std::size_t t = n; t-- > 0;) {
      Landmark& lm = out[t].landmarks[idx];
      if (lm.valid) {
        next = lm;
        have_next = true;
      } else if (have_next) {
        lm = next;
      }
    }
    for (std::size_t t = 0; t < n; ++t) out[t].landmarks[idx].valid = true;
  }
  return out;
}

NormalizationParams compute_signing_box(const std::vector<PoseFrame>& frames, double alpha) {
  if (frames.empty()) throw DataError("compute_signing_box: empty frame list");
  double min_x = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();
  for (const auto& frame : frames) {
    for (const auto& lm : frame.landmarks) {
      min_x = std::min(min_x, lm.x);
      max_x = std::max(max_x, lm.x);
      min_y = std::min(min_y, lm.y);
      max_y = std::max(max_y, lm.y);
    }
  }
  NormalizationParams p;
  p.alpha = alpha;
  p.center_x = (min_x + max_x) / 2.0;
  p.center_y = (min_y + max_y) / 2.0;
  p.box_w = max_x - min_x;
  p.box_h = max_y - min_y;
  if (p.box_w <= 0.0) p.box_w = 1.0;
  if (p.box_h <= 0.0) p.box_h = 1.0;
  return p;
}

std::vector<PoseFrame> normalize_signing_space(const std::vector<PoseFrame>& frames,
                                               const NormalizationParams& params) {
  std::vector<PoseFrame> out(frames);
  const double sx = 1.0 / (params.alpha * params.box_w);
  const double sy = 1.0 / (params.alpha * params.box_h);
  for (auto& frame : out) {
    for (auto& lm : frame.landmarks) {
      lm.x = (lm.x - params.center_x) * sx;
      lm.y = (lm.y - params.center_y) * sy;
    }
  }
  return out;
}

MatD resample_temporal(const MatD& frames, int target_len) {
  const Eigen::Index L = frames.rows();
  if (L < 1) throw DataError("resample_temporal: empty input");
  if (target_len < 1) throw UsageError("resample_temporal: target length must be >= 1");
  if (L == target_len) return frames;

  MatD out(target_len, frames.cols());
  if (L == 1) {
    out.rowwise() = frames.row(0);
    return out;
  }
  if (target_len == 1) {
    out.row(0) = frames.row(0);
    return out;
  }
  const double scale = static_cast<double>(L - 1) / static_cast<double>(target_len - 1);
  for (int i = 0; i < target_len; ++i) {
    const double pos = static_cast<double>(i) * scale;
    const auto i0 = static_cast<Eigen::Index>(std::floor(pos));
    const double frac = pos - static_cast<double>(i0);
    if (frac == 0.0 || i0 + 1 >= L) {
      out.row(i) = frames.row(i0);  // exact copy at integer positions
    } else {
      out.row(i) = frames.row(i0) + (frames.row(i0 + 1) - frames.row(i0)) * frac;
    }
  }
  return out;
}

std::vector<int> temporal_dropout_indices(int length, double rate, Rng& rng) {
  std::vector<int> kept(static_cast<std::size_t>(length));
  std::iota(kept.begin(), kept.end(), 0);
  if (length < 2 || rate <= 0.0) return kept;

  auto n_drop = static_cast<int>(std::llround(rate * static_cast<double>(length)));
  if (n_drop >= length) n_drop = length - 1;  // at least one frame survives
  if (n_drop <= 0) return kept;

  std::vector<int> order(kept);
  rng.shuffle(order);
  std::vector<char> dropped(static_cast<std::size_t>(length), 0);
  for (int i = 0; i < n_drop; ++i) dropped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  std::vector<int> survivors;
  survivors.reserve(static_cast<std::size_t>(length - n_drop));
  for (int i = 0; i < length; ++i) {
    if (!dropped[static_cast<std::size_t>(i)]) survivors.push_back(i);
  }
  return survivors;
}

MatD temporal_dropout(const MatD& frames, double rate, Rng& rng) {
  const auto L = static_cast<int>(frames.rows());
  std::vector<int> kept = temporal_dropout_indices(L, rate, rng);
  if (static_cast<int>(kept.size()) == L) return frames;
  MatD out(static_cast<Eigen::Index>(kept.size()), frames.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = frames.row(kept[i]);
  return out;
}

std::vector<PoseFrame> coordinate_noise(const std::vector<PoseFrame>& frames, double sigma, Rng& rng) {
  std::vector<PoseFrame> out(frames);
  if (sigma == 0.0) return out;
  for (auto& frame : out) {
    for (auto& lm : frame.landmarks) {
      if (!lm.valid) continue;  // invalid landmarks keep the canonical (0,0)
      lm.x += rng.normal(0.0, sigma);
      lm.y += rng.normal(0.0, sigma);
    }
  }
  return out;
}

// Body landmark order: nose, neck, right eye, left eye, right ear, left ear,
// right shoulder, left shoulder, right elbow, left elbow, right wrist,
// left wrist.  Nose and neck are on the mirror axis and unpaired.
const std::array<std::pair<int, int>, 5> kBodyFlipPairs{{{2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}}};

std::vector<PoseFrame> horizontal_flip(const std::vector<PoseFrame>& frames, int image_width) {
  std::vector<PoseFrame> out(frames);
  const double w = static_cast<double>(image_width);
  for (auto& frame : out) {
    for (const auto& [right, left] : kBodyFlipPairs) {
      std::swap(frame.landmarks[static_cast<std::size_t>(right)],
                frame.landmarks[static_cast<std::size_t>(left)]);
    }
    for (int k = 0; k < kNumHandLandmarks; ++k) {
      std::swap(frame.landmarks[static_cast<std::size_t>(kLeftHandStart + k)],
                frame.landmarks[static_cast<std::size_t>(kRightHandStart + k)]);
    }
    for (auto& lm : frame.landmarks) {
      if (lm.valid) lm.x = w - lm.x;
    }
  }
  return out;
}

void flatten_frame(const PoseFrame& frame, double* out) {
  for (int k = 0; k < kNumLandmarks; ++k) {
    out[2 * k] = frame.landmarks[static_cast<std::size_t>(k)].x;
    out[2 * k + 1] = frame.landmarks[static_cast<std::size_t>(k)].y;
  }
}

FeatureSequence preprocess_sample(const SignSample& sample, const PreprocessConfig& cfg, Rng* rng) {
  std::vector<PoseFrame> frames = repair_missing(sample.frames);

  if (cfg.augment.enabled) {
    if (rng == nullptr) throw UsageError("preprocess_sample: augmentation requires an rng");
    if (rng->bernoulli(cfg.augment.hflip_probability)) {
      frames = horizontal_flip(frames, sample.image_width);
    }
    frames = coordinate_noise(frames, cfg.augment.noise_sigma, *rng);
    std::vector<int> kept =
        temporal_dropout_indices(static_cast<int>(frames.size()), cfg.augment.temporal_dropout_rate, *rng);
    if (kept.size() != frames.size()) {
      std::vector<PoseFrame> survivors;
      survivors.reserve(kept.size());
      for (int idx : kept) survivors.push_back(frames[static_cast<std::size_t>(idx)]);
      frames = std::move(survivors);
    }
  }

  if (cfg.mode == NormalizationMode::kBdslBox) {
    NormalizationParams p = compute_signing_box(frames, cfg.alpha);
    frames = normalize_signing_space(frames, p);
  } else {
    for (auto& frame : frames) {
      std::vector<PoseFrame> one{frame};
      NormalizationParams p = compute_signing_box(one, 1.0);
      frame = normalize_signing_space(one, p)[0];
    }
  }

  MatD flat(static_cast<Eigen::Index>(frames.size()), kFeatureDim);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    flatten_frame(frames[t], flat.row(static_cast<Eigen::Index>(t)).data());
  }
  return FeatureSequence{resample_temporal(flat, cfg.target_len)};
}

}  // namespace bdsl
