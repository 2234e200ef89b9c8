#include "bdsl/pose_data.hpp"

#include <fstream>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "bdsl/rng.hpp"

namespace bdsl {

using nlohmann::json;

LabelVocab::LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw DataError("vocabulary contains an empty class name");
    if (!seen.insert(n).second) throw DataError("vocabulary contains duplicate class name '" + n + "'");
  }
}

const std::string& LabelVocab::name(int index) const {
  if (index < 0 || index >= size()) {
    throw DataError(strformat("class index %d out of range [0, %d)", index, size()));
  }
  return names_[static_cast<std::size_t>(index)];
}

int LabelVocab::index(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (names_[static_cast<std::size_t>(i)] == name) return i;
  }
  throw DataError("unknown class name '" + name + "'");
}

bool LabelVocab::contains(const std::string& name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

LabelVocab LabelVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  while (!names.empty() && names.back().empty()) names.pop_back();
  return LabelVocab(std::move(names));
}

void LabelVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file: " + path.string());
  for (const auto& n : names_) out << n << '\n';
}

namespace {

// Field accessors that name the record and field on every failure mode.
const json& require_field(const json& rec, const char* key, std::size_t record_index) {
  auto it = rec.find(key);
  if (it == rec.end()) {
    throw DataError(strformat("record %zu: missing field '%s'", record_index, key));
  }
  return *it;
}

std::string get_string(const json& rec, const char* key, std::size_t record_index) {
  const json& v = require_field(rec, key, record_index);
  if (!v.is_string()) throw DataError(strformat("record %zu: field '%s' must be a string", record_index, key));
  return v.get<std::string>();
}

double get_number(const json& rec, const char* key, std::size_t record_index) {
  const json& v = require_field(rec, key, record_index);
  if (!v.is_number()) throw DataError(strformat("record %zu: field '%s' must be a number", record_index, key));
  return v.get<double>();
}

int get_int(const json& rec, const char* key, std::size_t record_index) {
  const json& v = require_field(rec, key, record_index);
  if (!v.is_number_integer()) {
    throw DataError(strformat("record %zu: field '%s' must be an integer", record_index, key));
  }
  return v.get<int>();
}

PoseFrame parse_frame(const json& jframe, std::size_t record_index, std::size_t frame_index) {
  if (!jframe.is_array()) {
    throw DataError(strformat("record %zu: frame %zu must be an array", record_index, frame_index));
  }
  if (jframe.size() != kNumLandmarks) {
    throw DataError(strformat("record %zu: frame %zu has %zu landmarks, expected %d", record_index,
                              frame_index, jframe.size(), kNumLandmarks));
  }
  PoseFrame frame;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    const json& entry = jframe[k];
    if (entry.is_null()) continue;  // missing landmark: valid=false, (0,0)
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number() || !entry[1].is_number()) {
      throw DataError(strformat("record %zu: frame %zu landmark %zu must be [x,y] numbers or null",
                                record_index, frame_index, k));
    }
    Landmark& lm = frame.landmarks[k];
    lm.x = entry[0].get<double>();
    lm.y = entry[1].get<double>();
    lm.valid = true;
  }
  return frame;
}

}  // namespace

std::vector<SignSample> load_manifest(const std::filesystem::path& path, const LabelVocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sample file: " + path.string());
  std::vector<SignSample> samples;
  std::string line;
  std::size_t record_index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(strformat("record %zu: %s", record_index, e.what()));
    }
    if (!rec.is_object()) throw DataError(strformat("record %zu: not an object", record_index));

    SignSample s;
    s.video_id = get_string(rec, "video_id", record_index);
    s.signer_id = get_string(rec, "signer_id", record_index);
    s.label = vocab.index(get_string(rec, "label", record_index));
    s.fps = get_number(rec, "fps", record_index);
    s.image_width = get_int(rec, "image_width", record_index);
    s.image_height = get_int(rec, "image_height", record_index);
    if (s.image_width <= 0 || s.image_height <= 0) {
      throw DataError(strformat("record %zu: image dimensions must be positive", record_index));
    }
    const json& jframes = require_field(rec, "frames", record_index);
    if (!jframes.is_array() || jframes.empty()) {
      throw DataError(strformat("record %zu: field 'frames' must be a non-empty array", record_index));
    }
    s.frames.reserve(jframes.size());
    for (std::size_t f = 0; f < jframes.size(); ++f) {
      s.frames.push_back(parse_frame(jframes[f], record_index, f));
    }
    samples.push_back(std::move(s));
    ++record_index;
  }
  return samples;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SignSample>& samples,
                    const LabelVocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write sample file: " + path.string());
  for (const auto& s : samples) {
    json rec;
    rec["video_id"] = s.video_id;
    rec["signer_id"] = s.signer_id;
    rec["label"] = vocab.name(s.label);
    rec["fps"] = s.fps;
    rec["image_width"] = s.image_width;
    rec["image_height"] = s.image_height;
    json jframes = json::array();
    for (const auto& frame : s.frames) {
      json jframe = json::array();
      for (const auto& lm : frame.landmarks) {
        if (!lm.valid) {
          jframe.push_back(nullptr);
        } else if (lm.x == static_cast<double>(static_cast<long long>(lm.x)) &&
                   lm.y == static_cast<double>(static_cast<long long>(lm.y)) &&
                   std::abs(lm.x) < 1e15 && std::abs(lm.y) < 1e15) {
          // Integral coordinates are written as JSON integers: smaller files
          // and exact round-trips without relying on shortest-float printing.
          jframe.push_back(json::array({static_cast<long long>(lm.x), static_cast<long long>(lm.y)}));
        } else {
          jframe.push_back(json::array({lm.x, lm.y}));
        }
      }
      jframes.push_back(std::move(jframe));
    }
    rec["frames"] = std::move(jframes);
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

SplitSpec speaker_disjoint_split(const std::vector<SignSample>& samples,
                                 const std::array<double, 3>& ratios, std::uint64_t seed) {
  std::vector<std::string> signer_order;  // first-appearance order, pre-shuffle
  std::unordered_map<std::string, std::int64_t> video_counts;
  for (const auto& s : samples) {
    auto [it, inserted] = video_counts.try_emplace(s.signer_id, 0);
    if (inserted) signer_order.push_back(s.signer_id);
    ++it->second;
  }
  if (signer_order.size() < 3) {
    throw DataError(strformat("speaker-disjoint split needs at least 3 signers, got %zu", signer_order.size()));
  }

  Rng rng(seed);
  rng.shuffle(signer_order);

  const double total = static_cast<double>(samples.size());
  std::array<double, 3> assigned{0.0, 0.0, 0.0};
  std::array<std::set<std::string>*, 3> sets{};
  SplitSpec split;
  sets[0] = &split.train_signers;
  sets[1] = &split.val_signers;
  sets[2] = &split.test_signers;

  for (std::size_t i = 0; i < signer_order.size(); ++i) {
    const std::string& signer = signer_order[i];
    const std::size_t remaining = signer_order.size() - i;
    std::size_t n_empty = 0;
    for (const auto* s : sets) n_empty += s->empty() ? 1 : 0;

    int target_set = -1;
    if (remaining <= n_empty) {
      // Every remaining signer is needed to keep all three sets non-empty.
      for (int k = 0; k < 3; ++k) {
        if (sets[static_cast<std::size_t>(k)]->empty()) {
          target_set = k;
          break;
        }
      }
    } else {
      double best_deficit = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        double deficit = ratios[static_cast<std::size_t>(k)] * total - assigned[static_cast<std::size_t>(k)];
        if (deficit > best_deficit) {
          best_deficit = deficit;
          target_set = k;
        }
      }
    }
    sets[static_cast<std::size_t>(target_set)]->insert(signer);
    assigned[static_cast<std::size_t>(target_set)] += static_cast<double>(video_counts[signer]);
  }
  return split;
}

std::vector<const SignSample*> select_by_signers(const std::vector<SignSample>& samples,
                                                 const std::set<std::string>& signers) {
  std::vector<const SignSample*> out;
  for (const auto& s : samples) {
    if (signers.count(s.signer_id) != 0) out.push_back(&s);
  }
  return out;
}

}  // namespace bdsl
