#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "bdsl/common.hpp"
#include "bdsl/rng.hpp"

namespace bdsl {

enum class EncodingType { kLearnable, kSinusoidal, kFixedRandom };

std::string encoding_type_name(EncodingType t);
EncodingType encoding_type_from_name(const std::string& name);  // throws UsageError

struct ModelConfig {
  int d_model = 108;
  int n_layers = 4;
  int n_heads = 9;
  int d_ff = 432;
  int seq_len = 200;  // positional table rows; inputs may be shorter
  int n_classes = 60;
  std::vector<int> head_hidden = {512, 256, 128};
  double dropout_p = 0.15;
  EncodingType encoding_type = EncodingType::kLearnable;

  int head_dim() const { return d_model / n_heads; }
  bool pos_trainable() const { return encoding_type == EncodingType::kLearnable; }
  void validate() const;  // throws UsageError

  bool operator==(const ModelConfig&) const = default;
};

// Exact scalar-parameter count for a config (head may be empty, n_classes may
// be 0 to exclude the output layer from formula-level accounting).
std::uint64_t param_count(const ModelConfig& cfg);

// Analytic multiply-accumulate count for one single-sequence inference:
// per layer 4*T*d^2 (Q/K/V/O projections) + 2*T^2*d (scores + weighted sum)
// + 2*T*d*d_ff (FFN), plus the classification head's dense MACs.
std::uint64_t flops_estimate(const ModelConfig& cfg);
std::string flops_formula(const ModelConfig& cfg);

template <typename S>
struct AttentionParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct LayerNormParams {
  Mat<S> gain, bias;  // 1 x d
};

template <typename S>
struct EncoderLayerParams {
  AttentionParams<S> attn;
  Mat<S> w1, b1, w2, b2;  // FFN
  LayerNormParams<S> ln1, ln2;
};

template <typename S>
struct HeadLayerParams {
  Mat<S> w, b;
  LayerNormParams<S> ln;
};

template <typename S>
struct ModelParams {
  Mat<S> pos_table;  // seq_len x d_model
  std::vector<EncoderLayerParams<S>> layers;
  std::vector<HeadLayerParams<S>> hidden;
  Mat<S> out_w, out_b;

  static ModelParams zeros(const ModelConfig& cfg) {
    ModelParams p;
    const int d = cfg.d_model;
    p.pos_table = Mat<S>::Zero(cfg.seq_len, d);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& layer : p.layers) {
      for (Mat<S>* w : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo}) {
        *w = Mat<S>::Zero(d, d);
      }
      for (Mat<S>* b : {&layer.attn.bq, &layer.attn.bk, &layer.attn.bv, &layer.attn.bo}) {
        *b = Mat<S>::Zero(1, d);
      }
      layer.w1 = Mat<S>::Zero(d, cfg.d_ff);
      layer.b1 = Mat<S>::Zero(1, cfg.d_ff);
      layer.w2 = Mat<S>::Zero(cfg.d_ff, d);
      layer.b2 = Mat<S>::Zero(1, d);
      layer.ln1.gain = Mat<S>::Zero(1, d);
      layer.ln1.bias = Mat<S>::Zero(1, d);
      layer.ln2.gain = Mat<S>::Zero(1, d);
      layer.ln2.bias = Mat<S>::Zero(1, d);
    }
    int in_width = d;
    p.hidden.resize(cfg.head_hidden.size());
    for (std::size_t i = 0; i < cfg.head_hidden.size(); ++i) {
      const int h = cfg.head_hidden[i];
      p.hidden[i].w = Mat<S>::Zero(in_width, h);
      p.hidden[i].b = Mat<S>::Zero(1, h);
      p.hidden[i].ln.gain = Mat<S>::Zero(1, h);
      p.hidden[i].ln.bias = Mat<S>::Zero(1, h);
      in_width = h;
    }
    p.out_w = Mat<S>::Zero(in_width, cfg.n_classes);
    p.out_b = Mat<S>::Zero(1, cfg.n_classes);
    return p;
  }

  // Canonical tensor order: pos_table, then per layer the attention weights,
  // first norm, FFN, second norm (execution order), then head layers, output.
  // This order defines checkpoint payload layout and optimizer state slots.
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f(std::string("pos_table"), self.pos_table);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "attn.wq", layer.attn.wq);
      f(p + "attn.bq", layer.attn.bq);
      f(p + "attn.wk", layer.attn.wk);
      f(p + "attn.bk", layer.attn.bk);
      f(p + "attn.wv", layer.attn.wv);
      f(p + "attn.bv", layer.attn.bv);
      f(p + "attn.wo", layer.attn.wo);
      f(p + "attn.bo", layer.attn.bo);
      f(p + "ln1.gain", layer.ln1.gain);
      f(p + "ln1.bias", layer.ln1.bias);
      f(p + "ffn.w1", layer.w1);
      f(p + "ffn.b1", layer.b1);
      f(p + "ffn.w2", layer.w2);
      f(p + "ffn.b2", layer.b2);
      f(p + "ln2.gain", layer.ln2.gain);
      f(p + "ln2.bias", layer.ln2.bias);
    }
    for (std::size_t i = 0; i < self.hidden.size(); ++i) {
      auto& h = self.hidden[i];
      const std::string p = "head.hidden" + std::to_string(i) + ".";
      f(p + "w", h.w);
      f(p + "b", h.b);
      f(p + "ln.gain", h.ln.gain);
      f(p + "ln.bias", h.ln.bias);
    }
    f(std::string("head.out.w"), self.out_w);
    f(std::string("head.out.b"), self.out_b);
  }

  template <typename F>
  void for_each(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::vector<std::pair<std::string, Mat<S>*>> tensor_list() {
    std::vector<std::pair<std::string, Mat<S>*>> out;
    for_each([&](const std::string& name, Mat<S>& t) { out.emplace_back(name, &t); });
    return out;
  }
  std::vector<std::pair<std::string, const Mat<S>*>> tensor_list() const {
    std::vector<std::pair<std::string, const Mat<S>*>> out;
    for_each([&](const std::string& name, const Mat<S>& t) { out.emplace_back(name, &t); });
    return out;
  }

  void set_zero() {
    for_each([](const std::string&, Mat<S>& t) { t.setZero(); });
  }

  std::uint64_t total_elements() const {
    std::uint64_t n = 0;
    for_each([&](const std::string&, const Mat<S>& t) { n += static_cast<std::uint64_t>(t.size()); });
    return n;
  }

  template <typename S2>
  ModelParams<S2> cast() const {
    ModelParams<S2> out;
    out.pos_table = pos_table.template cast<S2>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& a = layers[l];
      auto& b = out.layers[l];
      b.attn.wq = a.attn.wq.template cast<S2>();
      b.attn.bq = a.attn.bq.template cast<S2>();
      b.attn.wk = a.attn.wk.template cast<S2>();
      b.attn.bk = a.attn.bk.template cast<S2>();
      b.attn.wv = a.attn.wv.template cast<S2>();
      b.attn.bv = a.attn.bv.template cast<S2>();
      b.attn.wo = a.attn.wo.template cast<S2>();
      b.attn.bo = a.attn.bo.template cast<S2>();
      b.w1 = a.w1.template cast<S2>();
      b.b1 = a.b1.template cast<S2>();
      b.w2 = a.w2.template cast<S2>();
      b.b2 = a.b2.template cast<S2>();
      b.ln1.gain = a.ln1.gain.template cast<S2>();
      b.ln1.bias = a.ln1.bias.template cast<S2>();
      b.ln2.gain = a.ln2.gain.template cast<S2>();
      b.ln2.bias = a.ln2.bias.template cast<S2>();
    }
    out.hidden.resize(hidden.size());
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      out.hidden[i].w = hidden[i].w.template cast<S2>();
      out.hidden[i].b = hidden[i].b.template cast<S2>();
      out.hidden[i].ln.gain = hidden[i].ln.gain.template cast<S2>();
      out.hidden[i].ln.bias = hidden[i].ln.bias.template cast<S2>();
    }
    out.out_w = out_w.template cast<S2>();
    out.out_b = out_b.template cast<S2>();
    return out;
  }
};

// True for tensors exempt from decoupled weight decay: LayerNorm gains/biases
// and the positional table.
inline bool is_decay_exempt(const std::string& tensor_name) {
  return tensor_name == "pos_table" || tensor_name.find(".ln") != std::string::npos;
}

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

// Exact GELU: x * Phi(x) with Phi the standard normal CDF via erf.  The float
// instantiation uses Eigen's vectorized erf; wider scalars take the precise
// libm path elementwise.
template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  if constexpr (std::is_same_v<S, float>) {
    return (0.5f * x.array() * (1.0f + (x.array() * 0.70710678118654752440f).erf())).matrix();
  } else {
    Mat<S> y(x.rows(), x.cols());
    const S* px = x.data();
    S* py = y.data();
    const S inv_sqrt2 = S(0.70710678118654752440L);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      py[i] = S(0.5) * px[i] * (S(1) + std::erf(px[i] * inv_sqrt2));
    }
    return y;
  }
}

// d/dx gelu(x) = Phi(x) + x * phi(x).
template <typename S>
Mat<S> gelu_grad(const Mat<S>& x) {
  const S inv_sqrt_2pi = S(0.39894228040143267794L);
  if constexpr (std::is_same_v<S, float>) {
    auto a = x.array();
    auto cdf = 0.5f * (1.0f + (a * 0.70710678118654752440f).erf());
    auto pdf = (-0.5f * a.square()).exp() * inv_sqrt_2pi;
    return (cdf + a * pdf).matrix();
  } else {
    Mat<S> y(x.rows(), x.cols());
    const S* px = x.data();
    S* py = y.data();
    const S inv_sqrt2 = S(0.70710678118654752440L);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const S v = px[i];
      const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
      const S pdf = std::exp(S(-0.5) * v * v) * inv_sqrt_2pi;
      py[i] = cdf + v * pdf;
    }
    return y;
  }
}

// Row-wise softmax with max subtraction.
template <typename S>
Mat<S> softmax_rows(const Mat<S>& s) {
  // Row-major storage: one contiguous pass per row keeps the exp vectorized.
  Mat<S> out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const S m = s.row(r).maxCoeff();
    out.row(r).array() = (s.row(r).array() - m).exp();
    const S sum = out.row(r).sum();
    out.row(r) /= sum;
  }
  return out;
}

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;     // rows x d
  Mat<S> inv_std;  // rows x 1
};

// Per-row layer normalization with biased variance:
// y = (x - mean)/sqrt(var + eps) * gain + bias.
template <typename S>
Mat<S> layer_norm_rows(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, S eps,
                       LayerNormCache<S>* cache = nullptr) {
  Mat<S> xhat(x.rows(), x.cols());
  Mat<S> inv_std(x.rows(), 1);
  Mat<S> y(x.rows(), x.cols());
  const auto g = gain.row(0).array();
  const auto b = bias.row(0).array();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mu = x.row(r).mean();
    xhat.row(r).array() = x.row(r).array() - mu;
    const S var = xhat.row(r).array().square().mean();
    const S is = S(1) / std::sqrt(var + eps);
    xhat.row(r) *= is;
    inv_std(r, 0) = is;
    y.row(r).array() = xhat.row(r).array() * g + b;
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Spec'd single-vector form.
template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, S eps) {
  return layer_norm_rows(x, gain, bias, eps);
}

// Backward through layer_norm_rows; accumulates dgain/dbias, returns dx.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LayerNormCache<S>& cache, const Mat<S>& gain,
                           Mat<S>& dgain, Mat<S>& dbias) {
  Mat<S> dx(dy.rows(), dy.cols());
  // Local accumulators keep this a single += per gradient tensor, so a caller
  // may hand in either a per-sample buffer or the running batch total and get
  // the same bits.
  Mat<S> dg_sum = Mat<S>::Zero(1, dy.cols());
  Mat<S> db_sum = Mat<S>::Zero(1, dy.cols());
  auto dg = dg_sum.row(0).array();
  auto db = db_sum.row(0).array();
  const auto g = gain.row(0).array();
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto dyr = dy.row(r).array();
    const auto xh = cache.xhat.row(r).array();
    dg += dyr * xh;
    db += dyr;
    dx.row(r).array() = dyr * g;  // dx row holds dxhat until the final line
    const S m1 = dx.row(r).mean();
    const S m2 = (dx.row(r).array() * xh).mean();
    dx.row(r).array() = (dx.row(r).array() - m1 - xh * m2) * cache.inv_std(r, 0);
  }
  dgain += dg_sum;
  dbias += db_sum;
  return dx;
}

namespace detail {

// Exact Bernoulli(p) element sampler for dropout masks.  Each element consumes
// one byte of a buffered engine word; only the single boundary byte value
// (probability 1/256) falls back to a full-width draw, so bulk masks cost
// about one engine call per eight elements instead of one per element.
class DropoutSampler {
 public:
  DropoutSampler(double p, Rng& rng) : rng_(rng) {
    const double scaled = p * 256.0;
    lo_ = scaled >= 256.0 ? 256u : (scaled <= 0.0 ? 0u : static_cast<std::uint32_t>(scaled));
    frac_thr_ = Rng::bernoulli_threshold(scaled - static_cast<double>(lo_));
  }

  bool drop() {
    if (avail_ == 0) {
      buf_ = rng_.next_u64();
      avail_ = 8;
    }
    const std::uint32_t b = static_cast<std::uint32_t>(buf_ & 0xFFu);
    buf_ >>= 8;
    --avail_;
    if (b < lo_) return true;
    if (b > lo_ || frac_thr_ == 0) return false;
    return rng_.bernoulli_with(frac_thr_);
  }

 private:
  Rng& rng_;
  std::uint64_t buf_ = 0;
  int avail_ = 0;
  std::uint32_t lo_ = 0;
  std::uint64_t frac_thr_ = 0;
};

}  // namespace detail

// Inverted-dropout factor matrix: entries are 0 with probability p, else
// 1/(1-p).  Row-major draw order.
template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat<S> m(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  detail::DropoutSampler sampler(p, rng);
  S* data = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    data[i] = sampler.drop() ? S(0) : keep;
  }
  return m;
}

// Draws the same mask as dropout_mask and applies it to x in one pass.
template <typename S>
Mat<S> apply_dropout(Mat<S>& x, double p, Rng& rng) {
  Mat<S> m(x.rows(), x.cols());
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  detail::DropoutSampler sampler(p, rng);
  S* md = m.data();
  S* xd = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (sampler.drop()) {
      md[i] = S(0);
      xd[i] = S(0);
    } else {
      md[i] = keep;
      xd[i] *= keep;
    }
  }
  return m;
}

// Same stream as dropout_mask, applied in place without materializing the
// factor matrix; for sites whose backward never reads the mask.
template <typename S>
void dropout_inplace(Mat<S>& x, double p, Rng& rng) {
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  detail::DropoutSampler sampler(p, rng);
  S* xd = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xd[i] = sampler.drop() ? S(0) : xd[i] * keep;
  }
}

// ---------------------------------------------------------------------------
// Forward trace
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderLayerTrace {
  Mat<S> h_in;                    // L x d, layer input
  Mat<S> q, k, v;                 // L x d
  std::vector<Mat<S>> attn;          // per head, L x L softmax probabilities
  std::vector<Mat<S>> attn_dropped;  // per head, probabilities after dropout
                                     // (empty when off; zeros mark dropped
                                     // entries since probabilities are > 0)
  Mat<S> concat;                  // L x d, concatenated head outputs
  Mat<S> resid1_mask;             // dropout factors (0 x 0 when off)
  LayerNormCache<S> ln1;
  Mat<S> h1;                      // first norm output
  Mat<S> ffn_pre;                 // L x d_ff, before GELU
  Mat<S> ffn_act;                 // L x d_ff, after GELU
  Mat<S> resid2_mask;
  LayerNormCache<S> ln2;
};

template <typename S>
struct HeadLayerTrace {
  Mat<S> in;      // 1 x in_width
  LayerNormCache<S> ln;
  Mat<S> ln_out;  // 1 x width, GELU input
  Mat<S> mask;    // dropout factors (0 x 0 when off)
};

template <typename S>
struct ForwardTrace {
  int input_len = 0;
  std::vector<EncoderLayerTrace<S>> layers;
  std::vector<HeadLayerTrace<S>> head;
  Mat<S> final_in;  // input of the output linear, 1 x last_width
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename S>
class Model {
 public:
  static constexpr S kLayerNormEps = S(1e-5);

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    params_ = ModelParams<S>::zeros(cfg_);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelParams<S>& params() { return params_; }
  const ModelParams<S>& params() const { return params_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) linear weights, zero biases, unit
  // LayerNorm gains; positional table N(0, 0.02) unless sinusoidal.  Draws
  // happen in canonical tensor order, so a seed pins the initialization.
  void init(Rng& rng) {
    if (cfg_.encoding_type == EncodingType::kSinusoidal) {
      fill_sinusoidal(params_.pos_table);
    } else {
      for (Eigen::Index i = 0; i < params_.pos_table.size(); ++i) {
        params_.pos_table.data()[i] = static_cast<S>(rng.normal(0.0, 0.02));
      }
    }
    for (auto& layer : params_.layers) {
      init_linear(layer.attn.wq, rng);
      layer.attn.bq.setZero();
      init_linear(layer.attn.wk, rng);
      layer.attn.bk.setZero();
      init_linear(layer.attn.wv, rng);
      layer.attn.bv.setZero();
      init_linear(layer.attn.wo, rng);
      layer.attn.bo.setZero();
      layer.ln1.gain.setOnes();
      layer.ln1.bias.setZero();
      init_linear(layer.w1, rng);
      layer.b1.setZero();
      init_linear(layer.w2, rng);
      layer.b2.setZero();
      layer.ln2.gain.setOnes();
      layer.ln2.bias.setZero();
    }
    for (auto& h : params_.hidden) {
      init_linear(h.w, rng);
      h.b.setZero();
      h.ln.gain.setOnes();
      h.ln.bias.setZero();
    }
    init_linear(params_.out_w, rng);
    params_.out_b.setZero();
  }

  // Single-sequence forward.  features: L x d_model with 1 <= L <= seq_len.
  // train_mode applies dropout (requires rng when dropout_p > 0) and fills
  // the trace when given.  Returns logits 1 x n_classes.
  Mat<S> forward_one(const Mat<S>& features, bool train_mode = false, Rng* rng = nullptr,
                     ForwardTrace<S>* trace = nullptr) const {
    check_input(features);
    const auto L = features.rows();
    const bool use_dropout = train_mode && cfg_.dropout_p > 0.0;
    if (use_dropout && rng == nullptr) {
      throw UsageError("forward_one: train-mode dropout requires an rng");
    }
    if (trace != nullptr) {
      trace->input_len = static_cast<int>(L);
      trace->layers.assign(static_cast<std::size_t>(cfg_.n_layers), {});
      trace->head.assign(cfg_.head_hidden.size(), {});
    }

    Mat<S> h = features + params_.pos_table.topRows(L);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      h = encoder_layer_forward(h, params_.layers[static_cast<std::size_t>(l)], use_dropout, rng,
                                trace != nullptr ? &trace->layers[static_cast<std::size_t>(l)] : nullptr);
    }

    Mat<S> a = h.colwise().mean();  // 1 x d, temporal mean pooling
    for (std::size_t i = 0; i < params_.hidden.size(); ++i) {
      const auto& hp = params_.hidden[i];
      HeadLayerTrace<S>* ht = trace != nullptr ? &trace->head[i] : nullptr;
      if (ht != nullptr) ht->in = a;
      Mat<S> pre = (a * hp.w).rowwise() + hp.b.row(0);
      Mat<S> ln_out = layer_norm_rows(pre, hp.ln.gain, hp.ln.bias, kLayerNormEps,
                                      ht != nullptr ? &ht->ln : nullptr);
      Mat<S> act = gelu(ln_out);
      if (ht != nullptr) ht->ln_out = std::move(ln_out);
      if (use_dropout) {
        Mat<S> mask = apply_dropout(act, cfg_.dropout_p, *rng);
        if (ht != nullptr) ht->mask = std::move(mask);
      }
      a = std::move(act);
    }
    if (trace != nullptr) trace->final_in = a;
    return (a * params_.out_w).rowwise() + params_.out_b.row(0);
  }

  // Inference-mode logits for a batch of sequences: B x n_classes.
  Mat<S> forward_batch(const std::vector<Mat<S>>& batch) const {
    Mat<S> logits(static_cast<Eigen::Index>(batch.size()), cfg_.n_classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      logits.row(static_cast<Eigen::Index>(i)) = forward_one(batch[i]);
    }
    return logits;
  }

  // Analytic gradients for one sequence; accumulates into grads (which must be
  // zeros(cfg)-shaped).  The trace must come from a train-mode forward_one on
  // the current parameters.
  void backward_one(const ForwardTrace<S>& trace, const Mat<S>& dlogits, ModelParams<S>& grads) const {
    if (static_cast<int>(trace.layers.size()) != cfg_.n_layers ||
        trace.head.size() != cfg_.head_hidden.size() || trace.input_len < 1 ||
        trace.input_len > cfg_.seq_len) {
      throw UsageError("backward_one: trace does not match the model configuration");
    }
    if (dlogits.rows() != 1 || dlogits.cols() != cfg_.n_classes) {
      throw UsageError("backward_one: upstream gradient shape mismatch");
    }
    const auto L = static_cast<Eigen::Index>(trace.input_len);

    grads.out_w += trace.final_in.transpose() * dlogits;
    grads.out_b += dlogits;
    Mat<S> da = dlogits * params_.out_w.transpose();

    for (std::size_t i = params_.hidden.size(); i-- > 0;) {
      const auto& hp = params_.hidden[i];
      const auto& ht = trace.head[i];
      if (ht.mask.size() > 0) da = (da.array() * ht.mask.array()).matrix();
      Mat<S> dln_out = (da.array() * gelu_grad(ht.ln_out).array()).matrix();
      Mat<S> dpre = layer_norm_backward(dln_out, ht.ln, hp.ln.gain, grads.hidden[i].ln.gain,
                                        grads.hidden[i].ln.bias);
      grads.hidden[i].w += ht.in.transpose() * dpre;
      grads.hidden[i].b += dpre;
      da = dpre * hp.w.transpose();
    }

    // Mean pooling: every time step receives dz / L.
    Mat<S> dh = (S(1) / static_cast<S>(L)) * da.replicate(L, 1);

    for (std::size_t l = params_.layers.size(); l-- > 0;) {
      dh = encoder_layer_backward(dh, params_.layers[l], trace.layers[l], &grads.layers[l]);
    }
    grads.pos_table.topRows(L) += dh;
  }

 private:
  static void fill_sinusoidal(Mat<S>& pos) {
    const auto d = pos.cols();
    for (Eigen::Index t = 0; t < pos.rows(); ++t) {
      for (Eigen::Index j = 0; j < d; ++j) {
        const double exponent = 2.0 * static_cast<double>(j / 2) / static_cast<double>(d);
        const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
        pos(t, j) = static_cast<S>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
      }
    }
  }

  static void init_linear(Mat<S>& w, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
  }

  void check_input(const Mat<S>& features) const {
    if (features.cols() != cfg_.d_model) {
      throw UsageError(strformat("forward: input has %ld feature columns, model expects %d",
                                 static_cast<long>(features.cols()), cfg_.d_model));
    }
    if (features.rows() < 1 || features.rows() > cfg_.seq_len) {
      throw UsageError(strformat("forward: input length %ld outside [1, %d]",
                                 static_cast<long>(features.rows()), cfg_.seq_len));
    }
    if (!features.allFinite()) throw DataError("forward: non-finite input");
  }

 public:
  // Attention and encoder-layer entry points are part of the public surface so
  // their contracts can be exercised in isolation.
  Mat<S> mhsa_forward(const Mat<S>& h, const AttentionParams<S>& ap, bool use_dropout, Rng* rng,
                      EncoderLayerTrace<S>* tr) const {
    const auto L = h.rows();
    const int dk = cfg_.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));

    Mat<S> q = (h * ap.wq).rowwise() + ap.bq.row(0);
    Mat<S> k = (h * ap.wk).rowwise() + ap.bk.row(0);
    Mat<S> v = (h * ap.wv).rowwise() + ap.bv.row(0);

    Mat<S> concat(L, cfg_.d_model);
    if (tr != nullptr) {
      tr->attn.resize(static_cast<std::size_t>(cfg_.n_heads));
      if (use_dropout) tr->attn_dropped.resize(static_cast<std::size_t>(cfg_.n_heads));
    }
    for (int i = 0; i < cfg_.n_heads; ++i) {
      const auto qi = q.middleCols(i * dk, dk);
      const auto ki = k.middleCols(i * dk, dk);
      const auto vi = v.middleCols(i * dk, dk);
      Mat<S> scores = (qi * ki.transpose()) * scale;
      Mat<S> probs = softmax_rows(scores);
      if (use_dropout) {
        Mat<S> dropped = probs;
        dropout_inplace(dropped, cfg_.dropout_p, *rng);
        concat.middleCols(i * dk, dk) = dropped * vi;
        if (tr != nullptr) tr->attn_dropped[static_cast<std::size_t>(i)] = std::move(dropped);
      } else {
        concat.middleCols(i * dk, dk) = probs * vi;
      }
      if (tr != nullptr) tr->attn[static_cast<std::size_t>(i)] = std::move(probs);
    }
    Mat<S> out = (concat * ap.wo).rowwise() + ap.bo.row(0);
    if (tr != nullptr) {
      tr->q = std::move(q);
      tr->k = std::move(k);
      tr->v = std::move(v);
      tr->concat = std::move(concat);
    }
    return out;
  }

  Mat<S> encoder_layer_forward(const Mat<S>& h, const EncoderLayerParams<S>& lp, bool use_dropout,
                               Rng* rng, EncoderLayerTrace<S>* tr) const {
    if (tr != nullptr) tr->h_in = h;

    Mat<S> attn_out = mhsa_forward(h, lp.attn, use_dropout, rng, tr);
    if (use_dropout) {
      Mat<S> mask = apply_dropout(attn_out, cfg_.dropout_p, *rng);
      if (tr != nullptr) tr->resid1_mask = std::move(mask);
    }
    Mat<S> h1 = layer_norm_rows<S>(Mat<S>(h + attn_out), lp.ln1.gain, lp.ln1.bias, kLayerNormEps,
                                   tr != nullptr ? &tr->ln1 : nullptr);

    Mat<S> pre = (h1 * lp.w1).rowwise() + lp.b1.row(0);
    Mat<S> act = gelu(pre);
    Mat<S> ffn_out = (act * lp.w2).rowwise() + lp.b2.row(0);
    if (use_dropout) {
      Mat<S> mask = apply_dropout(ffn_out, cfg_.dropout_p, *rng);
      if (tr != nullptr) tr->resid2_mask = std::move(mask);
    }
    Mat<S> h2 = layer_norm_rows<S>(Mat<S>(h1 + ffn_out), lp.ln2.gain, lp.ln2.bias, kLayerNormEps,
                                   tr != nullptr ? &tr->ln2 : nullptr);
    if (tr != nullptr) {
      tr->h1 = std::move(h1);
      tr->ffn_pre = std::move(pre);
      tr->ffn_act = std::move(act);
    }
    return h2;
  }

  Mat<S> encoder_layer_backward(const Mat<S>& dh2, const EncoderLayerParams<S>& lp,
                                const EncoderLayerTrace<S>& tr, EncoderLayerParams<S>* g) const {
    const int dk = cfg_.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));

    Mat<S> dsum2 = layer_norm_backward(dh2, tr.ln2, lp.ln2.gain, g->ln2.gain, g->ln2.bias);
    Mat<S> dh1 = dsum2;
    Mat<S> dffn = tr.resid2_mask.size() > 0 ? Mat<S>((dsum2.array() * tr.resid2_mask.array()).matrix())
                                            : dsum2;

    g->w2 += tr.ffn_act.transpose() * dffn;
    g->b2 += dffn.colwise().sum();
    Mat<S> dact = dffn * lp.w2.transpose();
    Mat<S> dpre = (dact.array() * gelu_grad(tr.ffn_pre).array()).matrix();
    g->w1 += tr.h1.transpose() * dpre;
    g->b1 += dpre.colwise().sum();
    dh1 += dpre * lp.w1.transpose();

    Mat<S> dsum1 = layer_norm_backward(dh1, tr.ln1, lp.ln1.gain, g->ln1.gain, g->ln1.bias);
    Mat<S> dh = dsum1;
    Mat<S> dattn_out = tr.resid1_mask.size() > 0
                           ? Mat<S>((dsum1.array() * tr.resid1_mask.array()).matrix())
                           : dsum1;

    g->attn.wo += tr.concat.transpose() * dattn_out;
    g->attn.bo += dattn_out.colwise().sum();
    Mat<S> dconcat = dattn_out * lp.attn.wo.transpose();

    Mat<S> dq(tr.q.rows(), tr.q.cols());
    Mat<S> dk_mat(tr.k.rows(), tr.k.cols());
    Mat<S> dv(tr.v.rows(), tr.v.cols());
    for (int i = 0; i < cfg_.n_heads; ++i) {
      const auto qi = tr.q.middleCols(i * dk, dk);
      const auto ki = tr.k.middleCols(i * dk, dk);
      const auto vi = tr.v.middleCols(i * dk, dk);
      const auto dci = dconcat.middleCols(i * dk, dk);
      const Mat<S>& probs = tr.attn[static_cast<std::size_t>(i)];
      const bool masked =
          !tr.attn_dropped.empty() && tr.attn_dropped[static_cast<std::size_t>(i)].size() > 0;
      const Mat<S>& dropped = masked ? tr.attn_dropped[static_cast<std::size_t>(i)] : probs;
      // Probabilities are strictly positive, so zeros in the dropped matrix
      // identify exactly the entries the mask zeroed.
      const S keep = static_cast<S>(1.0 / (1.0 - cfg_.dropout_p));

      Mat<S> d_dropped = dci * vi.transpose();
      dv.middleCols(i * dk, dk) = dropped.transpose() * dci;
      // dscores holds dprobs per row, then is transformed in place by the
      // softmax backward: dS = A (*) (dA - rowsum(dA (*) A)).
      Mat<S> dscores(probs.rows(), probs.cols());
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        if (masked) {
          dscores.row(r).array() = (dropped.row(r).array() != S(0))
                                       .select(d_dropped.row(r).array() * keep, S(0));
        } else {
          dscores.row(r) = d_dropped.row(r);
        }
        const auto pr = probs.row(r).array();
        const S rs = (dscores.row(r).array() * pr).sum();
        dscores.row(r).array() = pr * (dscores.row(r).array() - rs) * scale;
      }
      dq.middleCols(i * dk, dk) = dscores * ki;
      dk_mat.middleCols(i * dk, dk) = dscores.transpose() * qi;
    }

    g->attn.wq += tr.h_in.transpose() * dq;
    g->attn.bq += dq.colwise().sum();
    g->attn.wk += tr.h_in.transpose() * dk_mat;
    g->attn.bk += dk_mat.colwise().sum();
    g->attn.wv += tr.h_in.transpose() * dv;
    g->attn.bv += dv.colwise().sum();

    dh += dq * lp.attn.wq.transpose();
    dh += dk_mat * lp.attn.wk.transpose();
    dh += dv * lp.attn.wv.transpose();
    return dh;
  }

 private:
  ModelConfig cfg_;
  ModelParams<S> params_;
};

}  // namespace bdsl
