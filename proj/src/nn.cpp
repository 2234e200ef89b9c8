#include "bdsl/nn.hpp"

namespace bdsl {

std::string encoding_type_name(EncodingType t) {
  switch (t) {
    case EncodingType::kLearnable: return "learnable";
    case EncodingType::kSinusoidal: return "sinusoidal";
    case EncodingType::kFixedRandom: return "fixed_random";
  }
  throw UsageError("unknown encoding type");
}

EncodingType encoding_type_from_name(const std::string& name) {
  if (name == "learnable") return EncodingType::kLearnable;
  if (name == "sinusoidal") return EncodingType::kSinusoidal;
  if (name == "fixed_random") return EncodingType::kFixedRandom;
  throw UsageError("unknown encoding type '" + name + "' (expected learnable|sinusoidal|fixed_random)");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ff <= 0 || seq_len <= 0 || n_classes <= 0) {
    throw UsageError("model config: all dimensions must be positive (n_layers may be 0)");
  }
  if (d_model % n_heads != 0) {
    throw UsageError(strformat("model config: d_model %d not divisible by n_heads %d", d_model, n_heads));
  }
  for (int h : head_hidden) {
    if (h <= 0) throw UsageError("model config: head hidden widths must be positive");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw UsageError("model config: dropout_p must lie in [0, 1)");
  }
}

std::uint64_t param_count(const ModelConfig& cfg) {
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto ff = static_cast<std::uint64_t>(cfg.d_ff);
  std::uint64_t n = static_cast<std::uint64_t>(cfg.seq_len) * d;  // positional table
  const std::uint64_t per_layer = 4 * (d * d + d)                 // Q,K,V,O with biases
                                  + (d * ff + ff) + (ff * d + d)  // FFN
                                  + 2 * (2 * d);                  // two LayerNorms
  n += static_cast<std::uint64_t>(cfg.n_layers) * per_layer;
  std::uint64_t in_width = d;
  for (int h : cfg.head_hidden) {
    const auto hw = static_cast<std::uint64_t>(h);
    n += in_width * hw + hw;  // linear
    n += 2 * hw;              // LayerNorm
    in_width = hw;
  }
  if (cfg.n_classes > 0) {
    n += in_width * static_cast<std::uint64_t>(cfg.n_classes) + static_cast<std::uint64_t>(cfg.n_classes);
  }
  return n;
}

std::uint64_t flops_estimate(const ModelConfig& cfg) {
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto t = static_cast<std::uint64_t>(cfg.seq_len);
  const auto ff = static_cast<std::uint64_t>(cfg.d_ff);
  const std::uint64_t per_layer = 4 * t * d * d + 2 * t * t * d + 2 * t * d * ff;
  std::uint64_t macs = static_cast<std::uint64_t>(cfg.n_layers) * per_layer;
  std::uint64_t in_width = d;
  for (int h : cfg.head_hidden) {
    macs += in_width * static_cast<std::uint64_t>(h);
    in_width = static_cast<std::uint64_t>(h);
  }
  if (cfg.n_classes > 0) macs += in_width * static_cast<std::uint64_t>(cfg.n_classes);
  return macs;
}

std::string flops_formula(const ModelConfig& cfg) {
  std::uint64_t head_macs = 0;
  std::uint64_t in_width = static_cast<std::uint64_t>(cfg.d_model);
  for (int h : cfg.head_hidden) {
    head_macs += in_width * static_cast<std::uint64_t>(h);
    in_width = static_cast<std::uint64_t>(h);
  }
  if (cfg.n_classes > 0) head_macs += in_width * static_cast<std::uint64_t>(cfg.n_classes);
  return strformat(
      "%d layers * (4*T*d^2 [QKVO projections] + 2*T^2*d [attention scores + weighted sum] + "
      "2*T*d*d_ff [FFN]) + %llu [head] with T=%d, d=%d, d_ff=%d = %llu multiply-accumulates",
      cfg.n_layers, static_cast<unsigned long long>(head_macs), cfg.seq_len, cfg.d_model, cfg.d_ff,
      static_cast<unsigned long long>(flops_estimate(cfg)));
}

}  // namespace bdsl
