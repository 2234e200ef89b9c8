#include "bdsl/synth.hpp"

#include <algorithm>
#include <cmath>

#include "bdsl/rng.hpp"

namespace bdsl {

void SyntheticSpec::validate() const {
  if (n_classes < 1) throw UsageError("synthetic spec: n_classes must be >= 1");
  if (n_signers < 1) throw UsageError("synthetic spec: n_signers must be >= 1");
  if (samples_per_class_per_signer < 1) {
    throw UsageError("synthetic spec: samples_per_class_per_signer must be >= 1");
  }
  if (frame_range.first < 2 || frame_range.second > 400 || frame_range.first > frame_range.second) {
    throw UsageError("synthetic spec: frame_range must satisfy 2 <= min <= max <= 400");
  }
  if (trajectory_noise < 0.0) throw UsageError("synthetic spec: trajectory_noise must be >= 0");
  if (hand_dropout_prob < 0.0 || hand_dropout_prob > 1.0) {
    throw UsageError("synthetic spec: hand_dropout_prob must lie in [0, 1]");
  }
  if (image_width < 8 || image_height < 8) {
    throw UsageError("synthetic spec: image dimensions must be at least 8x8");
  }
  if (fps <= 0.0) throw UsageError("synthetic spec: fps must be positive");
}

namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct SignerStyle {
  double cx = 0.0;          // body axis x
  double cy = 0.0;          // neck y
  double scale = 1.0;       // overall similarity scale
  double shoulder_half = 0.0;
};

struct ClassTemplate {
  int pattern = 0;   // path shape family
  int cycles = 1;    // temporal repetitions across the sample
  int variant = 0;   // anchor placement family
  double radius = 60.0;
  double phase = 0.0;
  std::array<Vec2, kNumHandLandmarks> right_hand{};  // offsets from the wrist
};

// Triangle wave with period 1, range [-1, 1], tri(0) = -1.
double tri_wave(double z) {
  const double f = z - std::floor(z);
  return 4.0 * std::abs(f - 0.5) - 1.0;
}

// Moving-hand displacement from its anchor at progress u in [0, 1].
Vec2 path_point(const ClassTemplate& tpl, double u, double phase_jitter) {
  const double a = tpl.radius * (1.0 + 0.12 * (tpl.cycles - 2));
  const double w = 2.0 * M_PI * tpl.cycles;
  const double ph = tpl.phase + phase_jitter;
  const double t = w * u + ph;
  switch (tpl.pattern) {
    case 0:  // circle
      return {a * std::cos(t), a * std::sin(t)};
    case 1:  // horizontal sweep
      return {a * std::sin(t), 0.0};
    case 2:  // vertical sweep
      return {0.0, a * std::sin(t)};
    case 3:  // figure eight
      return {a * std::sin(t), 0.6 * a * std::sin(2.0 * t)};
    case 4: {  // pendulum arc hanging below the anchor
      const double theta = 0.9 * std::sin(t);
      return {a * std::sin(theta), 0.8 * a * std::cos(theta) - 0.4 * a};
    }
    default: {  // zigzag
      const double zu = tpl.cycles * u + ph / (2.0 * M_PI);
      return {a * tri_wave(zu), 0.5 * a * tri_wave(2.0 * zu + 0.25)};
    }
  }
}

// Anchor offset of the moving right hand relative to the neck, in signer units.
Vec2 variant_anchor(int variant) {
  switch (variant % 4) {
    case 0: return {95.0, 25.0};
    case 1: return {55.0, 30.0};
    case 2: return {85.0, -75.0};
    default: return {50.0, -70.0};
  }
}

SignerStyle draw_signer_style(std::uint64_t seed, int signer) {
  Rng rng(mix_seed(seed, 0x5349474EULL, static_cast<std::uint64_t>(signer)));
  SignerStyle st;
  st.cx = 320.0 + rng.uniform(-55.0, 55.0);
  st.cy = 190.0 + rng.uniform(-25.0, 25.0);
  st.scale = rng.uniform(0.78, 1.05);
  st.shoulder_half = 70.0 * st.scale * rng.uniform(0.92, 1.08);
  return st;
}

ClassTemplate draw_class_template(std::uint64_t seed, int cls) {
  Rng rng(mix_seed(seed, 0x434C4153ULL, static_cast<std::uint64_t>(cls)));
  ClassTemplate tpl;
  tpl.pattern = cls % 6;
  tpl.cycles = 1 + (cls / 6) % 3;
  tpl.variant = (cls / 18) % 4;
  tpl.radius = rng.uniform(52.0, 68.0);
  tpl.phase = rng.uniform(0.0, 2.0 * M_PI);

  // Fan of five fingers; per-class spread/tilt/size make the resting hand
  // shape itself a class cue.  Landmark 0 is the wrist.
  const double spread = rng.uniform(8.0, 16.0) * M_PI / 180.0;
  const double tilt = rng.uniform(-25.0, 25.0) * M_PI / 180.0;
  const double size = rng.uniform(30.0, 40.0);
  static constexpr std::array<double, 5> kFingerLen{0.70, 0.95, 1.00, 0.95, 0.75};
  tpl.right_hand[0] = {0.0, 0.0};
  for (int f = 0; f < 5; ++f) {
    const double angle = M_PI / 2.0 + (f - 2) * spread + tilt;
    for (int j = 1; j <= 4; ++j) {
      const double r = size * kFingerLen[static_cast<std::size_t>(f)] * (0.25 + 0.75 * j / 4.0);
      tpl.right_hand[static_cast<std::size_t>(1 + f * 4 + (j - 1))] = {r * std::cos(angle),
                                                                       -r * std::sin(angle)};
    }
  }
  return tpl;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();

  std::vector<std::string> class_names;
  class_names.reserve(static_cast<std::size_t>(spec.n_classes));
  for (int c = 0; c < spec.n_classes; ++c) class_names.push_back(strformat("sign_%03d", c));

  std::vector<SignerStyle> signers;
  signers.reserve(static_cast<std::size_t>(spec.n_signers));
  for (int s = 0; s < spec.n_signers; ++s) signers.push_back(draw_signer_style(seed, s));

  std::vector<ClassTemplate> templates;
  templates.reserve(static_cast<std::size_t>(spec.n_classes));
  for (int c = 0; c < spec.n_classes; ++c) templates.push_back(draw_class_template(seed, c));

  SyntheticDataset ds;
  ds.vocab = LabelVocab(class_names);
  ds.samples.reserve(static_cast<std::size_t>(spec.n_classes) * spec.n_signers *
                     spec.samples_per_class_per_signer);

  const double w_max = spec.image_width - 1.0;
  const double h_max = spec.image_height - 1.0;

  for (int cls = 0; cls < spec.n_classes; ++cls) {
    const ClassTemplate& tpl = templates[static_cast<std::size_t>(cls)];
    for (int signer = 0; signer < spec.n_signers; ++signer) {
      const SignerStyle& st = signers[static_cast<std::size_t>(signer)];
      for (int take = 0; take < spec.samples_per_class_per_signer; ++take) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cls) * 1000 +
                                   static_cast<std::uint64_t>(signer),
                         static_cast<std::uint64_t>(take)));

        const int n_frames = rng.uniform_int(spec.frame_range.first, spec.frame_range.second);
        const double phase_jitter = rng.uniform(-0.3, 0.3);
        const double ax = rng.uniform(-8.0, 8.0);
        const double ay = rng.uniform(-8.0, 8.0);
        const double cx = st.cx + rng.uniform(-12.0, 12.0);
        const double cy = st.cy + rng.uniform(-12.0, 12.0);

        bool drop_hand = rng.bernoulli(spec.hand_dropout_prob);
        int drop_side = 0, drop_start = 0, drop_len = 0;
        if (drop_hand) {
          drop_side = static_cast<int>(rng.uniform_index(2));
          drop_start = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_frames)));
          drop_len = rng.uniform_int(3, 10);
        }

        const double s = st.scale;
        const Vec2 anchor_rel = variant_anchor(tpl.variant);
        const double anchor_rx = cx + anchor_rel.x * s + ax;  // signer-left side of the image
        const double anchor_y = cy + anchor_rel.y * s + ay;

        SignSample sample;
        sample.video_id = strformat("sign%02d_signer%02d_take%02d", cls, signer, take);
        sample.signer_id = strformat("signer%02d", signer);
        sample.label = cls;
        sample.fps = spec.fps;
        sample.image_width = spec.image_width;
        sample.image_height = spec.image_height;
        sample.frames.resize(static_cast<std::size_t>(n_frames));

        for (int t = 0; t < n_frames; ++t) {
          const double u = static_cast<double>(t) / static_cast<double>(n_frames - 1);
          const Vec2 d = path_point(tpl, u, phase_jitter);

          // Hands mirror each other about the body axis, so the gesture is
          // symmetric and a horizontal flip maps a sample onto its own class.
          const Vec2 left_hand{2.0 * cx - (anchor_rx + d.x), anchor_y + d.y};
          const Vec2 right_hand{anchor_rx + d.x, anchor_y + d.y};

          std::array<Vec2, kNumLandmarks> pts{};
          pts[0] = {cx, cy - 34.0 * s};                        // nose
          pts[1] = {cx, cy};                                   // neck
          pts[2] = {cx - 10.0 * s, cy - 42.0 * s};             // right eye
          pts[3] = {cx + 10.0 * s, cy - 42.0 * s};             // left eye
          pts[4] = {cx - 19.0 * s, cy - 40.0 * s};             // right ear
          pts[5] = {cx + 19.0 * s, cy - 40.0 * s};             // left ear
          pts[6] = {cx - st.shoulder_half, cy + 8.0 * s};      // right shoulder
          pts[7] = {cx + st.shoulder_half, cy + 8.0 * s};      // left shoulder
          pts[8] = {0.5 * (pts[6].x + right_hand.x) - 14.0 * s,
                    0.5 * (pts[6].y + right_hand.y) + 10.0 * s};  // right elbow
          pts[9] = {0.5 * (pts[7].x + left_hand.x) + 14.0 * s,
                    0.5 * (pts[7].y + left_hand.y) + 10.0 * s};   // left elbow
          pts[10] = right_hand;                                // right wrist
          pts[11] = left_hand;                                 // left wrist
          for (int i = 0; i < kNumHandLandmarks; ++i) {
            const Vec2 off = tpl.right_hand[static_cast<std::size_t>(i)];
            pts[static_cast<std::size_t>(kLeftHandStart + i)] = {left_hand.x - off.x * s,
                                                                 left_hand.y + off.y * s};
            pts[static_cast<std::size_t>(kRightHandStart + i)] = {right_hand.x + off.x * s,
                                                                  right_hand.y + off.y * s};
          }

          PoseFrame& frame = sample.frames[static_cast<std::size_t>(t)];
          const bool in_drop_span = drop_hand && t >= drop_start && t < drop_start + drop_len;
          for (int i = 0; i < kNumLandmarks; ++i) {
            const double nx = rng.normal(0.0, spec.trajectory_noise);
            const double ny = rng.normal(0.0, spec.trajectory_noise);
            Landmark& lm = frame.landmarks[static_cast<std::size_t>(i)];
            const bool dropped =
                in_drop_span && ((drop_side == 0 && i >= kLeftHandStart && i < kRightHandStart) ||
                                 (drop_side == 1 && i >= kRightHandStart));
            if (dropped) {
              lm = Landmark{};  // invalid, canonical zeros
              continue;
            }
            lm.x = std::clamp(static_cast<double>(std::llround(pts[static_cast<std::size_t>(i)].x + nx)),
                              0.0, w_max);
            lm.y = std::clamp(static_cast<double>(std::llround(pts[static_cast<std::size_t>(i)].y + ny)),
                              0.0, h_max);
            lm.valid = true;
          }
        }
        ds.samples.push_back(std::move(sample));
      }
    }
  }
  return ds;
}

void write_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& out_dir) {
  SyntheticDataset ds = generate_synthetic(spec, seed);
  std::filesystem::create_directories(out_dir);
  ds.vocab.save(out_dir / "vocab.txt");
  write_manifest(out_dir / "samples.jsonl", ds.samples, ds.vocab);
}

}  // namespace bdsl
