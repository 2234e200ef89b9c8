#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bdsl/checkpoint.hpp"
#include "bdsl/nn.hpp"
#include "bdsl/run_config.hpp"
#include "bdsl/shard.hpp"

using namespace bdsl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "bdsl_format_tests";
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

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 12;
  cfg.n_heads = 3;
  cfg.n_layers = 2;
  cfg.d_ff = 20;
  cfg.seq_len = 6;
  cfg.n_classes = 4;
  cfg.head_hidden = {10, 7};
  cfg.dropout_p = 0.1;
  return cfg;
}

Model<float> random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model<float> model(cfg);
  Rng rng(seed);
  model.init(rng);
  return model;
}

bool tensors_equal(const ModelParams<float>& a, const ModelParams<float>& b) {
  bool equal = true;
  const auto la = a.tensor_list();
  const auto lb = b.tensor_list();
  equal = equal && la.size() == lb.size();
  for (std::size_t i = 0; equal && i < la.size(); ++i) {
    equal = la[i].first == lb[i].first && la[i].second->rows() == lb[i].second->rows() &&
            la[i].second->cols() == lb[i].second->cols() &&
            (la[i].second->array() == lb[i].second->array()).all();
  }
  return equal;
}

FeatureShard random_shard(std::uint64_t seed) {
  FeatureShard shard;
  shard.t = 5;
  shard.dim = 8;
  Rng rng(seed);
  for (int r = 0; r < 3; ++r) {
    MatF rec(shard.t, shard.dim);
    for (Eigen::Index i = 0; i < rec.size(); ++i) {
      rec.data()[i] = static_cast<float>(rng.normal(0.0, 1.0));
    }
    shard.records.push_back(std::move(rec));
  }
  return shard;
}

}  // namespace

TEST_CASE("checkpoints survive a save-load-save cycle byte for byte") {
  const ModelConfig cfg = small_config();
  const Model<float> model = random_model(cfg, 42);
  const fs::path first = temp_dir() / "roundtrip_a.bspt";
  const fs::path second = temp_dir() / "roundtrip_b.bspt";

  save_checkpoint(first, cfg, model.params());
  const auto [loaded_cfg, loaded_params] = load_checkpoint(first);
  CHECK(loaded_cfg == cfg);
  CHECK(tensors_equal(loaded_params, model.params()));

  save_checkpoint(second, loaded_cfg, loaded_params);
  CHECK(read_bytes(first) == read_bytes(second));
}

TEST_CASE("a reloaded model computes bit-identical logits") {
  const ModelConfig cfg = small_config();
  const Model<float> model = random_model(cfg, 7);
  const fs::path path = temp_dir() / "logits.bspt";
  save_checkpoint(path, cfg, model.params());

  const auto [loaded_cfg, loaded_params] = load_checkpoint(path);
  Model<float> reloaded(loaded_cfg);
  reloaded.params() = loaded_params;

  Rng rng(3);
  MatF features(cfg.seq_len, cfg.d_model);
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    features.data()[i] = static_cast<float>(rng.normal(0.0, 1.0));
  }
  const MatF a = model.forward_one(features);
  const MatF b = reloaded.forward_one(features);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("checkpoint loading rejects corruption") {
  const ModelConfig cfg = small_config();
  const Model<float> model = random_model(cfg, 11);
  const fs::path path = temp_dir() / "intact.bspt";
  save_checkpoint(path, cfg, model.params());
  const std::string bytes = read_bytes(path);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(temp_dir() / "no_such.bspt"), DataError);
  }
  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    const fs::path p = temp_dir() / "magic.bspt";
    write_bytes(p, bad);
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
  }
  SUBCASE("unsupported version") {
    std::string bad = bytes;
    bad[4] = static_cast<char>(99);
    const fs::path p = temp_dir() / "version.bspt";
    write_bytes(p, bad);
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
  }
  SUBCASE("truncated payload") {
    const fs::path p = temp_dir() / "trunc.bspt";
    write_bytes(p, bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
  }
  SUBCASE("mangled header") {
    // The JSON header starts right after magic+version+length; breaking its
    // first byte must not crash, only raise a data error.
    std::string bad = bytes;
    bad[16] = '!';
    const fs::path p = temp_dir() / "header.bspt";
    write_bytes(p, bad);
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
  }
}

TEST_CASE("model config json carries every field") {
  ModelConfig cfg = small_config();
  cfg.encoding_type = EncodingType::kSinusoidal;
  const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
  CHECK(back == cfg);
  CHECK_THROWS_AS(model_config_from_json({{"d_model", "not a number"}}), DataError);
}

TEST_CASE("feature shards round-trip bit-exactly") {
  const FeatureShard shard = random_shard(17);
  const fs::path path = temp_dir() / "features.bfts";
  write_feature_shard(path, shard);
  const FeatureShard back = read_feature_shard(path);
  CHECK(back.t == shard.t);
  CHECK(back.dim == shard.dim);
  REQUIRE(back.records.size() == shard.records.size());
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    CHECK((back.records[i].array() == shard.records[i].array()).all());
  }

  // Writing the reread shard reproduces the file bytes.
  const fs::path again = temp_dir() / "features2.bfts";
  write_feature_shard(again, back);
  CHECK(read_bytes(path) == read_bytes(again));
}

TEST_CASE("feature shard writing validates record shapes") {
  FeatureShard shard = random_shard(19);
  shard.records[1].resize(shard.t, shard.dim + 1);
  CHECK_THROWS_AS(write_feature_shard(temp_dir() / "bad.bfts", shard), UsageError);
}

TEST_CASE("feature shard reading rejects corruption") {
  const FeatureShard shard = random_shard(23);
  const fs::path path = temp_dir() / "ok.bfts";
  write_feature_shard(path, shard);
  const std::string bytes = read_bytes(path);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[1] = 'Z';
    const fs::path p = temp_dir() / "badmagic.bfts";
    write_bytes(p, bad);
    CHECK_THROWS_AS(read_feature_shard(p), DataError);
  }
  SUBCASE("truncated record") {
    const fs::path p = temp_dir() / "short.bfts";
    write_bytes(p, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_feature_shard(p), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_feature_shard(temp_dir() / "nope.bfts"), DataError);
  }
}

TEST_CASE("shard manifests round-trip through tab-separated text") {
  std::vector<ShardManifestRow> rows;
  rows.push_back({"clip_000", "sign_005", "signer03", 0});
  rows.push_back({"clip_001", "sign_012", "signer07", 200});
  rows.push_back({"clip with spaces", "sign_000", "signer00", 400});
  const fs::path path = temp_dir() / "manifest.tsv";
  write_shard_manifest(path, rows);
  const auto back = read_shard_manifest(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].video_id == rows[i].video_id);
    CHECK(back[i].label == rows[i].label);
    CHECK(back[i].signer_id == rows[i].signer_id);
    CHECK(back[i].row_offset == rows[i].row_offset);
  }
}

TEST_CASE("shard manifest reading rejects malformed rows") {
  const std::string header = "video_id\tlabel\tsigner_id\trow_offset\n";
  SUBCASE("wrong column count") {
    const fs::path p = temp_dir() / "columns.tsv";
    write_bytes(p, header + "a\tb\tc\n");
    CHECK_THROWS_AS(read_shard_manifest(p), DataError);
  }
  SUBCASE("non-numeric offset") {
    const fs::path p = temp_dir() / "offset.tsv";
    write_bytes(p, header + "a\tb\tc\txyz\n");
    CHECK_THROWS_AS(read_shard_manifest(p), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_shard_manifest(temp_dir() / "gone.tsv"), DataError);
  }
}

TEST_CASE("run configs survive a json round trip") {
  RunConfig rc;
  rc.seed = 99;
  rc.workers = 2;
  rc.model.n_layers = 3;
  rc.model.head_hidden = {64, 32};
  rc.model.encoding_type = EncodingType::kFixedRandom;
  rc.train.max_epochs = 7;
  rc.train.patience = 2;
  rc.train.curriculum_lengths = {100, 200};
  rc.train.max_lr = 5e-4;
  rc.preprocess.mode = NormalizationMode::kStandard;
  rc.preprocess.alpha = 0.9;
  rc.preprocess.augment.enabled = false;
  rc.preprocess.augment.noise_sigma = 1.5;
  rc.synth.n_classes = 10;
  rc.synth.frame_range = {30, 60};
  rc.resolve();

  const auto j = run_config_to_json(rc);
  const RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back) == j);
  // resolve() wiring: the training seed and the resample length are derived.
  CHECK(back.train.seed == 99);
  CHECK(back.preprocess.target_len == back.model.seq_len);
}

TEST_CASE("partial run config json keeps defaults for absent fields") {
  const RunConfig defaults;
  const RunConfig rc = run_config_from_json({{"seed", 7}, {"train", {{"batch_size", 16}}}});
  CHECK(rc.seed == 7);
  CHECK(rc.train.batch_size == 16);
  CHECK(rc.train.max_epochs == defaults.train.max_epochs);
  CHECK(rc.model == defaults.model);
  CHECK(rc.preprocess.alpha == defaults.preprocess.alpha);
  CHECK(rc.train.seed == 7);  // resolve() ran
}

TEST_CASE("run config loading distinguishes usage from data problems") {
  // In-memory parsing: a bad enum name is the caller's usage mistake.
  CHECK_THROWS_AS(run_config_from_json({{"preprocess", {{"normalization_mode", "bogus"}}}}),
                  UsageError);
  CHECK_THROWS_AS(run_config_from_json({{"seed", "not a number"}}), DataError);

  // From a file everything wrong with the content is a data problem.
  const fs::path bad_json = temp_dir() / "broken.json";
  write_bytes(bad_json, "{ not json");
  CHECK_THROWS_AS(load_run_config(bad_json), DataError);

  const fs::path bad_enum = temp_dir() / "bad_enum.json";
  write_bytes(bad_enum, R"({"preprocess": {"normalization_mode": "bogus"}})");
  CHECK_THROWS_AS(load_run_config(bad_enum), DataError);

  CHECK_THROWS_AS(load_run_config(temp_dir() / "absent.json"), DataError);

  const fs::path good = temp_dir() / "good.json";
  write_bytes(good, R"({"seed": 123, "model": {"n_heads": 4, "d_model": 8}})");
  const RunConfig rc = load_run_config(good);
  CHECK(rc.seed == 123);
  CHECK(rc.model.n_heads == 4);
  CHECK(rc.model.d_model == 8);
}
