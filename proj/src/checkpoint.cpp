#include "bdsl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bdsl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

using nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'B', 'S', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* data, std::size_t n, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw DataError(std::string("checkpoint: truncated while reading ") + what);
  }
}

}  // namespace

ordered_json model_config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["d_model"] = cfg.d_model;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["seq_len"] = cfg.seq_len;
  j["n_classes"] = cfg.n_classes;
  j["head_hidden"] = cfg.head_hidden;
  j["dropout_p"] = cfg.dropout_p;
  j["encoding_type"] = encoding_type_name(cfg.encoding_type);
  return j;
}

ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("d_model")) cfg.d_model = j.at("d_model").get<int>();
    if (j.contains("n_layers")) cfg.n_layers = j.at("n_layers").get<int>();
    if (j.contains("n_heads")) cfg.n_heads = j.at("n_heads").get<int>();
    if (j.contains("d_ff")) cfg.d_ff = j.at("d_ff").get<int>();
    if (j.contains("seq_len")) cfg.seq_len = j.at("seq_len").get<int>();
    if (j.contains("n_classes")) cfg.n_classes = j.at("n_classes").get<int>();
    if (j.contains("head_hidden")) cfg.head_hidden = j.at("head_hidden").get<std::vector<int>>();
    if (j.contains("dropout_p")) cfg.dropout_p = j.at("dropout_p").get<double>();
    if (j.contains("encoding_type")) {
      cfg.encoding_type = encoding_type_from_name(j.at("encoding_type").get<std::string>());
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams<float>& params) {
  ordered_json header;
  header["config"] = model_config_to_json(cfg);
  ordered_json directory = ordered_json::array();
  std::uint64_t offset = 0;
  params.for_each([&](const std::string& name, const MatF& t) {
    ordered_json entry;
    entry["name"] = name;
    entry["rows"] = t.rows();
    entry["cols"] = t.cols();
    entry["offset"] = offset;
    directory.push_back(std::move(entry));
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  });
  header["tensors"] = std::move(directory);
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  write_bytes(out, kMagic, sizeof(kMagic));
  write_bytes(out, &kFormatVersion, sizeof(kFormatVersion));
  const std::uint64_t header_len = header_text.size();
  write_bytes(out, &header_len, sizeof(header_len));
  write_bytes(out, header_text.data(), header_text.size());
  params.for_each([&](const std::string&, const MatF& t) {
    write_bytes(out, t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  });
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());

  char magic[4];
  read_bytes(in, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic bytes in " + path.string());
  }
  std::uint32_t version = 0;
  read_bytes(in, &version, sizeof(version), "format version");
  if (version != kFormatVersion) {
    throw DataError(strformat("checkpoint: unsupported format version %u", version));
  }
  std::uint64_t header_len = 0;
  read_bytes(in, &header_len, sizeof(header_len), "header length");
  std::string header_text(header_len, '\0');
  read_bytes(in, header_text.data(), header_len, "header");

  ordered_json header;
  try {
    header = ordered_json::parse(header_text);
  } catch (const ordered_json::parse_error& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!header.contains("config") || !header.contains("tensors")) {
    throw DataError("checkpoint: header missing config or tensor directory");
  }
  ModelConfig cfg = model_config_from_json(header.at("config"));
  cfg.validate();
  ModelParams<float> params = ModelParams<float>::zeros(cfg);
  auto tensors = params.tensor_list();

  const auto& directory = header.at("tensors");
  if (!directory.is_array() || directory.size() != tensors.size()) {
    throw DataError(strformat("checkpoint: tensor directory has %zu entries, model needs %zu",
                              directory.size(), tensors.size()));
  }
  const std::streampos payload_start = in.tellg();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = directory[i];
    const auto name = entry.at("name").get<std::string>();
    if (name != tensors[i].first) {
      throw DataError("checkpoint: tensor '" + name + "' out of order, expected '" + tensors[i].first + "'");
    }
    MatF& t = *tensors[i].second;
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (rows != t.rows() || cols != t.cols()) {
      throw DataError(strformat("checkpoint: tensor '%s' has shape %ldx%ld, expected %ldx%ld",
                                name.c_str(), static_cast<long>(rows), static_cast<long>(cols),
                                static_cast<long>(t.rows()), static_cast<long>(t.cols())));
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    read_bytes(in, t.data(), static_cast<std::size_t>(t.size()) * sizeof(float), name.c_str());
  }
  return {cfg, std::move(params)};
}

}  // namespace bdsl
