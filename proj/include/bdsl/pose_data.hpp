#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "bdsl/common.hpp"

namespace bdsl {

inline constexpr int kNumBodyLandmarks = 12;
inline constexpr int kNumHandLandmarks = 21;
inline constexpr int kNumLandmarks = 54;   // 12 body + 21 left hand + 21 right hand
inline constexpr int kLeftHandStart = 12;  // indices [12, 33)
inline constexpr int kRightHandStart = 33; // indices [33, 54)
inline constexpr int kFeatureDim = 2 * kNumLandmarks;  // 108

struct Landmark {
  double x = 0.0;  // pixels
  double y = 0.0;  // pixels
  bool valid = false;  // invalid landmarks carry the canonical (0,0) placeholder
};

struct PoseFrame {
  std::array<Landmark, kNumLandmarks> landmarks{};
};

struct SignSample {
  std::string video_id;
  std::string signer_id;
  int label = 0;  // index into the vocabulary
  double fps = 0.0;
  int image_width = 0;
  int image_height = 0;
  std::vector<PoseFrame> frames;  // length >= 1
};

class LabelVocab {
 public:
  LabelVocab() = default;
  // Throws DataError on duplicate names.
  explicit LabelVocab(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int index) const;
  // Throws DataError when the name is unknown.
  int index(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  static LabelVocab load(const std::filesystem::path& path);  // one name per line
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> names_;
};

struct SplitSpec {
  std::set<std::string> train_signers;
  std::set<std::string> val_signers;
  std::set<std::string> test_signers;

  bool operator==(const SplitSpec&) const = default;
};

// Line-delimited JSON records; see README for the schema.  Labels in the file
// are class names, resolved against `vocab`.  Ordering is file order.
std::vector<SignSample> load_manifest(const std::filesystem::path& path, const LabelVocab& vocab);
void write_manifest(const std::filesystem::path& path, const std::vector<SignSample>& samples,
                    const LabelVocab& vocab);

// Signers are shuffled by seed, then each signer's whole video set is assigned
// greedily to the split with the largest remaining video-count deficit, so the
// realized fractions track `ratios` within one signer's worth of videos.
// Requires at least 3 distinct signers.
SplitSpec speaker_disjoint_split(const std::vector<SignSample>& samples,
                                 const std::array<double, 3>& ratios, std::uint64_t seed);

// Convenience selector: samples whose signer_id is in the given set, file order.
std::vector<const SignSample*> select_by_signers(const std::vector<SignSample>& samples,
                                                 const std::set<std::string>& signers);

}  // namespace bdsl
