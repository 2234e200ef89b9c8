#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bdsl/pose_data.hpp"
#include "bdsl/synth.hpp"

using namespace bdsl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "bdsl_synth_tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.n_classes = 2;
  spec.n_signers = 2;
  spec.samples_per_class_per_signer = 1;
  spec.frame_range = {10, 20};
  return spec;
}

}  // namespace

TEST_CASE("generation writes byte-identical files for one seed") {
  const SyntheticSpec spec = tiny_spec();
  const fs::path a = temp_dir() / "det_a";
  const fs::path b = temp_dir() / "det_b";
  write_synthetic(spec, 42, a);
  write_synthetic(spec, 42, b);
  CHECK(read_bytes(a / "vocab.txt") == read_bytes(b / "vocab.txt"));
  CHECK(read_bytes(a / "samples.jsonl") == read_bytes(b / "samples.jsonl"));
  CHECK(!read_bytes(a / "samples.jsonl").empty());
}

TEST_CASE("two classes, two signers, one take is exactly four records") {
  const SyntheticDataset ds = generate_synthetic(tiny_spec(), 1);
  REQUIRE(ds.samples.size() == 4);
  CHECK(ds.vocab.size() == 2);
  // Ordered by class, then signer, then take.
  CHECK(ds.samples[0].video_id == "sign00_signer00_take00");
  CHECK(ds.samples[1].video_id == "sign00_signer01_take00");
  CHECK(ds.samples[2].video_id == "sign01_signer00_take00");
  CHECK(ds.samples[3].video_id == "sign01_signer01_take00");
  CHECK(ds.samples[0].label == 0);
  CHECK(ds.samples[2].label == 1);
  CHECK(ds.samples[1].signer_id == "signer01");
}

TEST_CASE("every class-signer pair yields the requested take count") {
  SyntheticSpec spec;
  spec.n_classes = 3;
  spec.n_signers = 4;
  spec.samples_per_class_per_signer = 5;
  spec.frame_range = {8, 12};
  const SyntheticDataset ds = generate_synthetic(spec, 9);
  CHECK(ds.samples.size() == 60u);
  std::map<std::pair<int, std::string>, int> counts;
  for (const auto& s : ds.samples) ++counts[{s.label, s.signer_id}];
  CHECK(counts.size() == 12u);
  for (const auto& [key, n] : counts) CHECK(n == 5);
}

TEST_CASE("vocabulary names classes in zero-padded order") {
  const SyntheticDataset ds = generate_synthetic(tiny_spec(), 3);
  CHECK(ds.vocab.name(0) == "sign_000");
  CHECK(ds.vocab.name(1) == "sign_001");
  CHECK(ds.vocab.index("sign_001") == 1);
  CHECK(ds.vocab.contains("sign_000"));
  CHECK_FALSE(ds.vocab.contains("sign_999"));
}

TEST_CASE("frame counts respect the configured range") {
  SyntheticSpec spec = tiny_spec();
  spec.n_classes = 4;
  spec.samples_per_class_per_signer = 3;
  spec.frame_range = {15, 40};
  const SyntheticDataset ds = generate_synthetic(spec, 5);
  bool saw_variety = false;
  const std::size_t first = ds.samples[0].frames.size();
  for (const auto& s : ds.samples) {
    CHECK(s.frames.size() >= 15u);
    CHECK(s.frames.size() <= 40u);
    saw_variety = saw_variety || s.frames.size() != first;
  }
  CHECK(saw_variety);
}

TEST_CASE("coordinates are integer pixels inside the image") {
  SyntheticSpec spec = tiny_spec();
  spec.image_width = 320;
  spec.image_height = 240;
  const SyntheticDataset ds = generate_synthetic(spec, 7);
  for (const auto& s : ds.samples) {
    CHECK(s.image_width == 320);
    CHECK(s.image_height == 240);
    CHECK(s.fps == spec.fps);
    for (const auto& f : s.frames) {
      for (const auto& lm : f.landmarks) {
        if (!lm.valid) continue;
        CHECK(lm.x == std::floor(lm.x));
        CHECK(lm.y == std::floor(lm.y));
        CHECK(lm.x >= 0.0);
        CHECK(lm.x <= 319.0);
        CHECK(lm.y >= 0.0);
        CHECK(lm.y <= 239.0);
      }
    }
  }
}

TEST_CASE("hand dropout controls missing landmarks") {
  SyntheticSpec spec = tiny_spec();
  spec.n_classes = 3;
  spec.samples_per_class_per_signer = 4;

  spec.hand_dropout_prob = 0.0;
  for (const auto& s : generate_synthetic(spec, 11).samples) {
    for (const auto& f : s.frames) {
      for (const auto& lm : f.landmarks) CHECK(lm.valid);
    }
  }

  spec.hand_dropout_prob = 1.0;
  for (const auto& s : generate_synthetic(spec, 11).samples) {
    int frames_with_gap = 0;
    for (const auto& f : s.frames) {
      // Body landmarks never drop; a gap is always a whole hand block.
      for (int i = 0; i < kLeftHandStart; ++i) {
        CHECK(f.landmarks[static_cast<std::size_t>(i)].valid);
      }
      bool left_gone = true, right_gone = true;
      for (int i = 0; i < kNumHandLandmarks; ++i) {
        left_gone = left_gone && !f.landmarks[static_cast<std::size_t>(kLeftHandStart + i)].valid;
        right_gone = right_gone && !f.landmarks[static_cast<std::size_t>(kRightHandStart + i)].valid;
      }
      if (left_gone || right_gone) ++frames_with_gap;
    }
    CHECK(frames_with_gap >= 1);
  }
}

TEST_CASE("different seeds draw different data") {
  const SyntheticDataset a = generate_synthetic(tiny_spec(), 1);
  const SyntheticDataset b = generate_synthetic(tiny_spec(), 2);
  bool any_difference = a.samples[0].frames.size() != b.samples[0].frames.size();
  if (!any_difference) {
    for (std::size_t f = 0; f < a.samples[0].frames.size() && !any_difference; ++f) {
      for (int i = 0; i < kNumLandmarks && !any_difference; ++i) {
        const auto& la = a.samples[0].frames[f].landmarks[static_cast<std::size_t>(i)];
        const auto& lb = b.samples[0].frames[f].landmarks[static_cast<std::size_t>(i)];
        any_difference = la.x != lb.x || la.y != lb.y;
      }
    }
  }
  CHECK(any_difference);
}

TEST_CASE("generated files reload into the identical dataset") {
  const SyntheticSpec spec = tiny_spec();
  const fs::path dir = temp_dir() / "reload";
  write_synthetic(spec, 13, dir);
  const SyntheticDataset ds = generate_synthetic(spec, 13);

  const LabelVocab vocab = LabelVocab::load(dir / "vocab.txt");
  CHECK(vocab.names() == ds.vocab.names());

  const auto samples = load_manifest(dir / "samples.jsonl", vocab);
  REQUIRE(samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].video_id == ds.samples[i].video_id);
    CHECK(samples[i].signer_id == ds.samples[i].signer_id);
    CHECK(samples[i].label == ds.samples[i].label);
    CHECK(samples[i].fps == ds.samples[i].fps);
    CHECK(samples[i].image_width == ds.samples[i].image_width);
    REQUIRE(samples[i].frames.size() == ds.samples[i].frames.size());
    for (std::size_t f = 0; f < samples[i].frames.size(); ++f) {
      for (int k = 0; k < kNumLandmarks; ++k) {
        const auto& got = samples[i].frames[f].landmarks[static_cast<std::size_t>(k)];
        const auto& want = ds.samples[i].frames[f].landmarks[static_cast<std::size_t>(k)];
        CHECK(got.valid == want.valid);
        CHECK(got.x == want.x);  // integer pixels survive the text round trip
        CHECK(got.y == want.y);
      }
    }
  }
}

TEST_CASE("spec validation rejects out-of-range settings") {
  SyntheticSpec spec;
  CHECK_NOTHROW(spec.validate());

  auto reject = [](auto mutate) {
    SyntheticSpec s;
    mutate(s);
    CHECK_THROWS_AS(s.validate(), UsageError);
  };
  reject([](SyntheticSpec& s) { s.n_classes = 0; });
  reject([](SyntheticSpec& s) { s.n_signers = 0; });
  reject([](SyntheticSpec& s) { s.samples_per_class_per_signer = 0; });
  reject([](SyntheticSpec& s) { s.frame_range = {1, 5}; });
  reject([](SyntheticSpec& s) { s.frame_range = {50, 401}; });
  reject([](SyntheticSpec& s) { s.frame_range = {60, 50}; });
  reject([](SyntheticSpec& s) { s.trajectory_noise = -1.0; });
  reject([](SyntheticSpec& s) { s.hand_dropout_prob = 1.5; });
  reject([](SyntheticSpec& s) { s.image_width = 4; });
  reject([](SyntheticSpec& s) { s.fps = 0.0; });
}
