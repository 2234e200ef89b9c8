#include "bdsl/shard.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bdsl {

static_assert(std::endian::native == std::endian::little,
              "shard serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'F', 'T', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

void write_feature_shard(const std::filesystem::path& path, const FeatureShard& shard) {
  for (const auto& rec : shard.records) {
    if (rec.rows() != static_cast<Eigen::Index>(shard.t) || rec.cols() != static_cast<Eigen::Index>(shard.dim)) {
      throw UsageError("feature shard: record shape does not match declared T x dim");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature shard: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof(kFormatVersion));
  const std::uint64_t count = shard.records.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&shard.t), sizeof(shard.t));
  out.write(reinterpret_cast<const char*>(&shard.dim), sizeof(shard.dim));
  for (const auto& rec : shard.records) {
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(static_cast<std::size_t>(rec.size()) * sizeof(float)));
  }
  if (!out) throw DataError("feature shard write failed: " + path.string());
}

FeatureShard read_feature_shard(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature shard: " + path.string());
  char magic[4];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("feature shard: bad magic bytes in " + path.string());
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kFormatVersion) {
    throw DataError(strformat("feature shard: unsupported format version %u", version));
  }
  FeatureShard shard;
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  in.read(reinterpret_cast<char*>(&shard.t), sizeof(shard.t));
  in.read(reinterpret_cast<char*>(&shard.dim), sizeof(shard.dim));
  if (!in) throw DataError("feature shard: truncated header in " + path.string());
  shard.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MatF rec(shard.t, shard.dim);
    const auto bytes = static_cast<std::streamsize>(static_cast<std::size_t>(rec.size()) * sizeof(float));
    in.read(reinterpret_cast<char*>(rec.data()), bytes);
    if (in.gcount() != bytes) {
      throw DataError(strformat("feature shard: truncated at record %llu", static_cast<unsigned long long>(i)));
    }
    shard.records.push_back(std::move(rec));
  }
  return shard;
}

void write_shard_manifest(const std::filesystem::path& path, const std::vector<ShardManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write shard manifest: " + path.string());
  out << "video_id\tlabel\tsigner_id\trow_offset\n";
  for (const auto& r : rows) {
    out << r.video_id << '\t' << r.label << '\t' << r.signer_id << '\t' << r.row_offset << '\n';
  }
  if (!out) throw DataError("shard manifest write failed: " + path.string());
}

std::vector<ShardManifestRow> read_shard_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open shard manifest: " + path.string());
  std::vector<ShardManifestRow> rows;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;  // header row
    }
    std::istringstream ss(line);
    ShardManifestRow r;
    std::string offset_text;
    if (!std::getline(ss, r.video_id, '\t') || !std::getline(ss, r.label, '\t') ||
        !std::getline(ss, r.signer_id, '\t') || !std::getline(ss, offset_text)) {
      throw DataError(strformat("shard manifest: malformed line %zu", line_no));
    }
    try {
      r.row_offset = std::stoull(offset_text);
    } catch (const std::exception&) {
      throw DataError(strformat("shard manifest: bad row offset on line %zu", line_no));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace bdsl
