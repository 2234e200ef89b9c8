#pragma once

#include <filesystem>
#include <utility>

#include <json.hpp>

#include "bdsl/nn.hpp"

namespace bdsl {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

// Checkpoint layout: magic "BSPT", u32 format version (little-endian), u64
// header length, JSON header {config, tensor directory with shapes and byte
// offsets}, then raw little-endian float32 payloads in directory order.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams<float>& params);
std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path);

}  // namespace bdsl
