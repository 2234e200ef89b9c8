#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bdsl/common.hpp"

namespace bdsl {

// Flat binary tensor file for preprocessed features: magic "BFTS", u32 format
// version, u64 record count, u32 T, u32 feature dim, then count*T rows of dim
// little-endian float32 values.
struct FeatureShard {
  std::uint32_t t = 0;
  std::uint32_t dim = 0;
  std::vector<MatF> records;  // each T x dim
};

void write_feature_shard(const std::filesystem::path& path, const FeatureShard& shard);
FeatureShard read_feature_shard(const std::filesystem::path& path);

// Tab-separated sidecar: video_id, label name, signer_id, starting row of the
// record inside the shard (record index * T).
struct ShardManifestRow {
  std::string video_id;
  std::string label;
  std::string signer_id;
  std::uint64_t row_offset = 0;
};

void write_shard_manifest(const std::filesystem::path& path, const std::vector<ShardManifestRow>& rows);
std::vector<ShardManifestRow> read_shard_manifest(const std::filesystem::path& path);

}  // namespace bdsl
