#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bdsl/nn.hpp"
#include "bdsl/rng.hpp"

using namespace bdsl;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 18;
  cfg.n_layers = 1;
  cfg.n_heads = 9;
  cfg.d_ff = 24;
  cfg.seq_len = 8;
  cfg.n_classes = 3;
  cfg.head_hidden = {16};
  cfg.dropout_p = 0.0;
  return cfg;
}

MatD random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

MatD permute_rows(const MatD& m, const std::vector<int>& perm) {
  MatD out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  }
  return out;
}

// Reference attention: explicit per-head loops, no batching shortcuts.
MatD naive_mhsa(const MatD& x, const AttentionParams<double>& ap, int n_heads) {
  const Eigen::Index L = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dk = d / n_heads;
  const MatD q = (x * ap.wq).rowwise() + ap.bq.row(0);
  const MatD k = (x * ap.wk).rowwise() + ap.bk.row(0);
  const MatD v = (x * ap.wv).rowwise() + ap.bv.row(0);
  MatD concat(L, d);
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index off = h * dk;
    for (Eigen::Index i = 0; i < L; ++i) {
      std::vector<double> score(static_cast<std::size_t>(L));
      double max_s = -1e300;
      for (Eigen::Index j = 0; j < L; ++j) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < dk; ++c) s += q(i, off + c) * k(j, off + c);
        s /= std::sqrt(static_cast<double>(dk));
        score[static_cast<std::size_t>(j)] = s;
        max_s = std::max(max_s, s);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - max_s));
      for (Eigen::Index c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) acc += score[static_cast<std::size_t>(j)] / z * v(j, off + c);
        concat(i, off + c) = acc;
      }
    }
  }
  return (concat * ap.wo).rowwise() + ap.bo.row(0);
}

}  // namespace

TEST_CASE("default parameter count hits the sub-million budget") {
  const ModelConfig cfg;
  CHECK(param_count(cfg) == 816652);
  CHECK(param_count(cfg) >= 762000);
  CHECK(param_count(cfg) <= 932000);
}

TEST_CASE("positional table plus bare classifier counts by hand") {
  ModelConfig cfg;
  cfg.n_layers = 0;
  cfg.head_hidden = {};
  CHECK(param_count(cfg) == 200 * 108 + 108 * 60 + 60);  // 28,140
}

TEST_CASE("the tiny config parameter count matches manual accounting") {
  // pos 8*18=144; layer: 4*(324+18)=1368 + ffn 432+24+432+18=906 + norms 72 = 2346;
  // head 18*16+16+32=336; out 16*3+3=51.
  CHECK(param_count(tiny_config()) == 144 + 2346 + 336 + 51);
  CHECK(param_count(tiny_config()) == 2877);
}

TEST_CASE("doubling the feed-forward width adds exactly the new FFN elements") {
  ModelConfig a;
  ModelConfig b = a;
  b.d_ff = 2 * a.d_ff;
  const std::uint64_t extra = static_cast<std::uint64_t>(a.d_ff);
  const std::uint64_t expected =
      static_cast<std::uint64_t>(a.n_layers) * (2 * static_cast<std::uint64_t>(a.d_model) * extra + extra);
  CHECK(param_count(b) - param_count(a) == expected);
}

TEST_CASE("parameter count agrees with the allocated tensor sizes") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg;
    cfg.n_heads = 1 + rng.uniform_int(0, 3);
    cfg.d_model = cfg.n_heads * (1 + rng.uniform_int(0, 15));
    cfg.n_layers = rng.uniform_int(0, 3);
    cfg.d_ff = 1 + rng.uniform_int(0, 63);
    cfg.seq_len = 1 + rng.uniform_int(0, 30);
    cfg.n_classes = 1 + rng.uniform_int(0, 9);
    cfg.head_hidden.clear();
    for (int i = rng.uniform_int(0, 2); i > 0; --i) cfg.head_hidden.push_back(1 + rng.uniform_int(0, 30));
    CHECK(param_count(cfg) == ModelParams<float>::zeros(cfg).total_elements());
  }
}

TEST_CASE("single-frame single-layer MAC count is the bare formula") {
  ModelConfig cfg;
  cfg.seq_len = 1;
  cfg.n_layers = 1;
  cfg.head_hidden = {};
  cfg.n_classes = 0;  // formula-level accounting: no classifier term
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  const auto ff = static_cast<std::uint64_t>(cfg.d_ff);
  CHECK(flops_estimate(cfg) == 4 * d * d + 2 * d + 2 * d * ff);
}

TEST_CASE("attention MACs grow quadratically in the sequence length") {
  ModelConfig cfg;
  cfg.head_hidden = {};
  cfg.n_classes = 0;
  ModelConfig twice = cfg;
  twice.seq_len = 2 * cfg.seq_len;
  const auto t = static_cast<std::uint64_t>(cfg.seq_len);
  const auto d = static_cast<std::uint64_t>(cfg.d_model);
  // f(T) = A*T + B*T^2 with B = n_layers*2d, so f(2T) - 2 f(T) = 2 B T^2.
  CHECK(flops_estimate(twice) - 2 * flops_estimate(cfg) ==
        static_cast<std::uint64_t>(cfg.n_layers) * 4 * d * t * t);
}

TEST_CASE("the FLOPs formula text echoes the computed total") {
  const ModelConfig cfg;
  const std::string text = flops_formula(cfg);
  CHECK(text.find(std::to_string(flops_estimate(cfg))) != std::string::npos);
  CHECK(text.find("multiply-accumulates") != std::string::npos);
}

TEST_CASE("gelu fixes the origin and approaches the identity") {
  MatD x(1, 3);
  x << 0.0, 10.0, 1.0;
  const MatD y = gelu(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) >= 9.999);
  CHECK(y(0, 1) <= 10.0);
  CHECK(std::abs(y(0, 2) - 0.8413447460685429) < 1e-12);  // Phi(1) = 0.841345
  MatD neg(1, 1);
  neg << -10.0;
  CHECK(std::abs(gelu(neg)(0, 0)) < 1e-6);
}

TEST_CASE("float gelu tracks the double path") {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const double v = rng.uniform() * 20.0 - 10.0;
    MatD xd(1, 1);
    xd << v;
    MatF xf(1, 1);
    xf << static_cast<float>(v);
    CHECK(std::abs(static_cast<double>(gelu(xf)(0, 0)) - gelu(xd)(0, 0)) < 4e-6);
  }
}

TEST_CASE("gelu gradient matches central finite differences") {
  const double h = 1e-6;
  for (double v : {-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0}) {
    MatD x(1, 1), xp(1, 1), xm(1, 1);
    x << v;
    xp << v + h;
    xm << v - h;
    const double fd = (gelu(xp)(0, 0) - gelu(xm)(0, 0)) / (2.0 * h);
    CHECK(std::abs(gelu_grad(x)(0, 0) - fd) < 1e-8);
  }
}

TEST_CASE("normalizing a constant vector yields zeros") {
  const MatD x = MatD::Constant(1, 16, 3.25);
  const MatD gain = MatD::Ones(1, 16);
  const MatD bias = MatD::Zero(1, 16);
  const MatD y = layer_norm(x, gain, bias, 1e-5);
  CHECK((y.array() == 0.0).all());
}

TEST_CASE("normalized rows have near-zero mean and near-unit variance") {
  Rng rng(29);
  const MatD x = random_matrix(4, 108, rng);
  const MatD gain = MatD::Ones(1, 108);
  const MatD bias = MatD::Zero(1, 108);
  const MatD y = layer_norm_rows(x, gain, bias, 1e-5);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-12);
    const double var = (y.row(r).array() - y.row(r).mean()).square().mean();
    CHECK(std::abs(var - 1.0) < 1e-3);  // eps-damped: var/(var+eps)
  }
}

TEST_CASE("layer norm matches a two-pass oracle") {
  Rng rng(31);
  const MatD x = random_matrix(5, 16, rng, 3.0);
  const MatD gain = random_matrix(1, 16, rng);
  const MatD bias = random_matrix(1, 16, rng);
  const double eps = 1e-5;
  const MatD y = layer_norm_rows(x, gain, bias, eps);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double want = (x(r, c) - mean) / std::sqrt(var + eps) * gain(0, c) + bias(0, c);
      CHECK(std::abs(y(r, c) - want) < 1e-12);
    }
  }
}

TEST_CASE("layer norm backward matches finite differences") {
  Rng rng(37);
  const MatD x = random_matrix(3, 8, rng);
  const MatD gain = random_matrix(1, 8, rng);
  const MatD bias = random_matrix(1, 8, rng);
  const MatD dy = random_matrix(3, 8, rng);
  const double eps = 1e-5;

  LayerNormCache<double> cache;
  layer_norm_rows(x, gain, bias, eps, &cache);
  MatD dgain = MatD::Zero(1, 8), dbias = MatD::Zero(1, 8);
  const MatD dx = layer_norm_backward(dy, cache, gain, dgain, dbias);

  const double h = 1e-6;
  const auto loss_at = [&](const MatD& xx, const MatD& g, const MatD& b) {
    return (layer_norm_rows(xx, g, b, eps).array() * dy.array()).sum();
  };
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      MatD xp = x, xm = x;
      xp(r, c) += h;
      xm(r, c) -= h;
      CHECK(std::abs(dx(r, c) - (loss_at(xp, gain, bias) - loss_at(xm, gain, bias)) / (2 * h)) < 1e-7);
    }
  }
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    MatD gp = gain, gm = gain;
    gp(0, c) += h;
    gm(0, c) -= h;
    CHECK(std::abs(dgain(0, c) - (loss_at(x, gp, bias) - loss_at(x, gm, bias)) / (2 * h)) < 1e-7);
    MatD bp = bias, bm = bias;
    bp(0, c) += h;
    bm(0, c) -= h;
    CHECK(std::abs(dbias(0, c) - (loss_at(x, gain, bp) - loss_at(x, gain, bm)) / (2 * h)) < 1e-7);
  }
}

TEST_CASE("softmax closed forms") {
  MatD s(3, 2);
  s << 0.0, 0.0, std::log(2.0), 0.0, 1000.0, 0.0;
  const MatD p = softmax_rows(s);
  CHECK(p(0, 0) == 0.5);
  CHECK(p(0, 1) == 0.5);
  CHECK(std::abs(p(1, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(p(1, 1) - 1.0 / 3.0) < 1e-15);
  CHECK(p(2, 0) == 1.0);  // max subtraction keeps the huge row finite
  CHECK(p(2, 1) == 0.0);
}

TEST_CASE("softmax rows sum to one across magnitudes") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const int rows = rng.uniform_int(1, 6);
    const int cols = rng.uniform_int(1, 8);
    const double scale = std::pow(10.0, rng.uniform() * 8.0 - 4.0);  // up to +-1e4
    MatD s(rows, cols);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = (rng.uniform() * 2.0 - 1.0) * scale;
    const MatD p = softmax_rows(s);
    CHECK(p.allFinite());
    CHECK((p.array() >= 0.0).all());
    CHECK((p.array() <= 1.0).all());
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("single-frame attention reduces to the value projection") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 6;
  cfg.n_heads = 2;
  Model<double> model(cfg);
  Rng rng(43);
  model.init(rng);
  const auto& ap = model.params().layers[0].attn;
  const MatD x = random_matrix(1, 6, rng);
  const MatD out = model.mhsa_forward(x, ap, false, nullptr, nullptr);
  const MatD want = (((x * ap.wv).rowwise() + ap.bv.row(0)) * ap.wo).rowwise() + ap.bo.row(0);
  CHECK(((out - want).array().abs() < 1e-12).all());
}

TEST_CASE("zeroed query and key weights give uniform attention") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 6;
  cfg.n_heads = 2;
  Model<double> model(cfg);
  auto& ap = model.params().layers[0].attn;
  ap.wq.setZero();
  ap.wk.setZero();
  ap.wv.setIdentity();
  ap.wo.setIdentity();
  Rng rng(47);
  const MatD x = random_matrix(5, 6, rng);
  const MatD out = model.mhsa_forward(x, ap, false, nullptr, nullptr);
  const MatD col_mean = x.colwise().mean();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    CHECK(((out.row(r) - col_mean).array().abs() < 1e-12).all());
  }
}

TEST_CASE("attention matches a naive triple-loop oracle") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 12;
  cfg.n_heads = 2;
  cfg.seq_len = 4;
  Model<double> model(cfg);
  Rng rng(53);
  model.init(rng);
  const auto& ap = model.params().layers[0].attn;
  for (int trial = 0; trial < 25; ++trial) {
    const MatD x = random_matrix(4, 12, rng);
    const MatD out = model.mhsa_forward(x, ap, false, nullptr, nullptr);
    const MatD want = naive_mhsa(x, ap, 2);
    CHECK(((out - want).array().abs() < 1e-10).all());
  }
}

TEST_CASE("encoder layers preserve the input shape") {
  const ModelConfig cfg = tiny_config();
  Model<double> model(cfg);
  Rng rng(59);
  model.init(rng);
  for (int len : {1, 3, 8}) {
    const MatD x = random_matrix(len, cfg.d_model, rng);
    const MatD out = model.encoder_layer_forward(x, model.params().layers[0], false, nullptr, nullptr);
    CHECK(out.rows() == x.rows());
    CHECK(out.cols() == x.cols());
    CHECK(out.allFinite());
  }
}

TEST_CASE("an all-zero-weight encoder layer is two stacked normalizations") {
  const ModelConfig cfg = tiny_config();
  Model<double> model(cfg);  // zero weights from construction
  auto& layer = model.params().layers[0];
  layer.ln1.gain.setOnes();
  layer.ln2.gain.setOnes();
  Rng rng(61);
  const MatD x = random_matrix(5, cfg.d_model, rng);
  const MatD out = model.encoder_layer_forward(x, layer, false, nullptr, nullptr);
  const MatD ones = MatD::Ones(1, cfg.d_model);
  const MatD zeros = MatD::Zero(1, cfg.d_model);
  const MatD want = layer_norm_rows(layer_norm_rows(x, ones, zeros, Model<double>::kLayerNormEps),
                                    ones, zeros, Model<double>::kLayerNormEps);
  CHECK((out.array() == want.array()).all());
}

TEST_CASE("inference repeats bit-identically") {
  const ModelConfig cfg = tiny_config();
  Model<float> model(cfg);
  Rng rng(67);
  model.init(rng);
  const MatF x = random_matrix(8, cfg.d_model, rng).cast<float>();
  const MatF a = model.forward_one(x);
  const MatF b = model.forward_one(x);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("batched logits have one row per sequence and equal inputs agree") {
  ModelConfig cfg;  // default: 60 classes
  Model<float> model(cfg);
  Rng rng(71);
  model.init(rng);
  const MatF x = random_matrix(20, cfg.d_model, rng).cast<float>();
  const MatF y = random_matrix(20, cfg.d_model, rng).cast<float>();
  const MatF logits = model.forward_batch({x, y, x});
  CHECK(logits.rows() == 3);
  CHECK(logits.cols() == 60);
  CHECK((logits.row(0).array() == logits.row(2).array()).all());
  CHECK_FALSE((logits.row(0).array() == logits.row(1).array()).all());
}

TEST_CASE("a zeroed positional table makes logits permutation invariant") {
  ModelConfig cfg;
  cfg.dropout_p = 0.0;
  Model<double> model(cfg);
  Rng rng(73);
  model.init(rng);
  model.params().pos_table.setZero();
  const MatD x = random_matrix(12, cfg.d_model, rng);
  std::vector<int> perm(12);
  for (int i = 0; i < 12; ++i) perm[static_cast<std::size_t>(i)] = 11 - i;
  const MatD base = model.forward_one(x);
  const MatD permuted = model.forward_one(permute_rows(x, perm));
  CHECK((base - permuted).array().abs().maxCoeff() < 1e-6);

  Rng shuffle_rng(79);
  for (int trial = 0; trial < 5; ++trial) {
    shuffle_rng.shuffle(perm);
    const MatD shuffled = model.forward_one(permute_rows(x, perm));
    CHECK((base - shuffled).array().abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("a live positional table makes some permutation move the logits") {
  ModelConfig cfg;
  cfg.dropout_p = 0.0;
  Model<double> model(cfg);
  Rng rng(83);
  model.init(rng);  // learnable: N(0, 0.02) table, nonzero
  const MatD x = random_matrix(12, cfg.d_model, rng);
  std::vector<int> perm(12);
  for (int i = 0; i < 12; ++i) perm[static_cast<std::size_t>(i)] = 11 - i;
  const MatD base = model.forward_one(x);
  const MatD permuted = model.forward_one(permute_rows(x, perm));
  CHECK((base - permuted).array().abs().maxCoeff() > 1e-3);
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  const ModelConfig cfg = tiny_config();
  Model<double> model(cfg);
  Rng rng(89);
  model.init(rng);
  const MatD x = random_matrix(8, cfg.d_model, rng);
  ForwardTrace<double> trace;
  model.forward_one(x, true, nullptr, &trace);
  auto grads = ModelParams<double>::zeros(cfg);
  model.backward_one(trace, MatD::Zero(1, cfg.n_classes), grads);
  grads.for_each([](const std::string&, const MatD& t) { CHECK((t.array() == 0.0).all()); });
}

TEST_CASE("positional gradient touches only the rows the input used") {
  ModelConfig cfg = tiny_config();
  cfg.seq_len = 4;
  Model<double> model(cfg);
  Rng rng(97);
  model.init(rng);
  const MatD x = random_matrix(2, cfg.d_model, rng);  // uses rows 0 and 1 of the table
  ForwardTrace<double> trace;
  model.forward_one(x, true, nullptr, &trace);
  auto grads = ModelParams<double>::zeros(cfg);
  model.backward_one(trace, random_matrix(1, cfg.n_classes, rng), grads);
  CHECK(grads.pos_table.row(0).array().abs().maxCoeff() > 0.0);
  CHECK(grads.pos_table.row(1).array().abs().maxCoeff() > 0.0);
  CHECK((grads.pos_table.row(2).array() == 0.0).all());
  CHECK((grads.pos_table.row(3).array() == 0.0).all());
}

TEST_CASE("forward rejects malformed inputs") {
  const ModelConfig cfg = tiny_config();
  Model<double> model(cfg);
  Rng rng(101);
  model.init(rng);
  CHECK_THROWS_AS(model.forward_one(MatD::Zero(2, cfg.d_model + 1)), UsageError);
  CHECK_THROWS_AS(model.forward_one(MatD::Zero(cfg.seq_len + 1, cfg.d_model)), UsageError);
  MatD bad = MatD::Zero(2, cfg.d_model);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model.forward_one(bad), DataError);

  ModelConfig dropped = cfg;
  dropped.dropout_p = 0.15;  // train-mode dropout without a generator
  Model<double> dropped_model(dropped);
  CHECK_THROWS_AS(dropped_model.forward_one(MatD::Zero(1, cfg.d_model), true, nullptr, nullptr),
                  UsageError);
}

TEST_CASE("tensors visit in the canonical checkpoint order") {
  ModelConfig cfg = tiny_config();
  const auto params = ModelParams<float>::zeros(cfg);
  std::vector<std::string> names;
  params.for_each([&](const std::string& n, const MatF&) { names.push_back(n); });
  const std::vector<std::string> want{
      "pos_table",
      "layer0.attn.wq", "layer0.attn.bq", "layer0.attn.wk", "layer0.attn.bk",
      "layer0.attn.wv", "layer0.attn.bv", "layer0.attn.wo", "layer0.attn.bo",
      "layer0.ln1.gain", "layer0.ln1.bias",
      "layer0.ffn.w1", "layer0.ffn.b1", "layer0.ffn.w2", "layer0.ffn.b2",
      "layer0.ln2.gain", "layer0.ln2.bias",
      "head.hidden0.w", "head.hidden0.b", "head.hidden0.ln.gain", "head.hidden0.ln.bias",
      "head.out.w", "head.out.b",
  };
  CHECK(names == want);
}

TEST_CASE("weight decay exemptions cover norms and the positional table") {
  CHECK(is_decay_exempt("pos_table"));
  CHECK(is_decay_exempt("layer0.ln1.gain"));
  CHECK(is_decay_exempt("layer3.ln2.bias"));
  CHECK(is_decay_exempt("head.hidden0.ln.gain"));
  CHECK(is_decay_exempt("head.hidden2.ln.bias"));
  CHECK_FALSE(is_decay_exempt("layer0.attn.wq"));
  CHECK_FALSE(is_decay_exempt("layer2.ffn.w1"));
  CHECK_FALSE(is_decay_exempt("head.hidden1.w"));
  CHECK_FALSE(is_decay_exempt("head.out.w"));
  CHECK_FALSE(is_decay_exempt("head.out.b"));
}

TEST_CASE("model configuration validation rejects bad shapes") {
  ModelConfig cfg;
  cfg.d_model = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig{};
  cfg.d_model = 100;  // not divisible by 9 heads
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig{};
  cfg.dropout_p = 1.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig{};
  cfg.head_hidden = {512, -1};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig{};
  cfg.n_classes = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = ModelConfig{};
  cfg.n_layers = 0;  // a pure pooling classifier is legal
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sinusoidal encoding follows the interleaved formula") {
  ModelConfig cfg = tiny_config();
  cfg.encoding_type = EncodingType::kSinusoidal;
  Model<float> model(cfg);
  Rng rng(103);
  model.init(rng);
  const auto& pos = model.params().pos_table;
  CHECK_FALSE(cfg.pos_trainable());
  for (Eigen::Index t = 0; t < pos.rows(); ++t) {
    for (Eigen::Index j = 0; j < pos.cols(); ++j) {
      const double exponent = 2.0 * static_cast<double>(j / 2) / static_cast<double>(cfg.d_model);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      const double want = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
      CHECK(std::abs(static_cast<double>(pos(t, j)) - want) < 1e-6);
    }
  }
  CHECK(pos(0, 0) == 0.0f);  // sin(0)
  CHECK(pos(0, 1) == 1.0f);  // cos(0)
}

TEST_CASE("fixed random encoding is seed-reproducible but frozen") {
  ModelConfig cfg = tiny_config();
  cfg.encoding_type = EncodingType::kFixedRandom;
  CHECK_FALSE(cfg.pos_trainable());
  Model<float> a(cfg), b(cfg);
  Rng ra(7), rb(7);
  a.init(ra);
  b.init(rb);
  CHECK((a.params().pos_table.array() == b.params().pos_table.array()).all());
  CHECK(a.params().pos_table.array().abs().maxCoeff() > 0.0f);
}

TEST_CASE("initialization is deterministic and respects the stated families") {
  const ModelConfig cfg = tiny_config();
  Model<float> a(cfg), b(cfg);
  Rng ra(11), rb(11);
  a.init(ra);
  b.init(rb);
  const auto ta = a.params().tensor_list();
  const auto tb = b.params().tensor_list();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK((ta[i].second->array() == tb[i].second->array()).all());
  }
  const auto& layer = a.params().layers[0];
  CHECK((layer.attn.bq.array() == 0.0f).all());
  CHECK((layer.ln1.gain.array() == 1.0f).all());
  CHECK((layer.ln1.bias.array() == 0.0f).all());
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on weights.
  const float bound = 1.0f / std::sqrt(18.0f);
  CHECK(layer.attn.wq.array().abs().maxCoeff() <= bound);
  CHECK(layer.attn.wq.array().abs().maxCoeff() > 0.5f * bound);  // not degenerate
}

TEST_CASE("dropout factor matrices carry the inverted-keep scale") {
  Rng rng(13);
  const MatF zero_p = dropout_mask<float>(8, 8, 0.0, rng);
  CHECK((zero_p.array() == 1.0f).all());

  const double p = 0.15;
  Rng mask_rng(17);
  const MatF m = dropout_mask<float>(200, 500, p, mask_rng);
  const double keep = 1.0 / (1.0 - p);
  double zeros = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = m.data()[i];
    CHECK((v == 0.0f || v == static_cast<float>(keep)));
    zeros += v == 0.0f ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(m.size());
  const double drop_rate = zeros / n;
  CHECK(std::abs(drop_rate - p) < 3.0 * std::sqrt(p * (1.0 - p) / n));
  CHECK(std::abs(m.cast<double>().mean() - 1.0) < 3.0 * std::sqrt(p / (1.0 - p) / n));
}

TEST_CASE("the three dropout forms consume one shared stream") {
  const double p = 0.15;
  Rng r1(19), r2(19), r3(19);
  const MatF mask = dropout_mask<float>(37, 11, p, r1);
  MatF x = random_matrix(37, 11, r3).cast<float>();  // r3 reseeded below
  Rng data_rng(23);
  x = random_matrix(37, 11, data_rng).cast<float>();
  MatF applied = x;
  const MatF mask2 = apply_dropout(applied, p, r2);
  CHECK((mask.array() == mask2.array()).all());
  CHECK((applied.array() == (x.array() * mask.array())).all());
  Rng r4(19);
  MatF inplace = x;
  dropout_inplace(inplace, p, r4);
  CHECK((inplace.array() == applied.array()).all());
}
