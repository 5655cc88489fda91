#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ptab/error.hpp"
#include "ptab/rng.hpp"
#include "ptab/tokenizer.hpp"

namespace ptab::nn {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t hidden = 64;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  double dropout = 0.1;

  void validate() const {
    if (n_layers == 0 || n_heads == 0 || hidden == 0 || ffn_dim == 0)
      throw ContractError("model dimensions must be positive");
    if (hidden % n_heads != 0)
      throw ContractError("hidden size " + std::to_string(hidden) +
                          " not divisible by " + std::to_string(n_heads) + " heads");
    if (vocab_size <= kNumSpecials) throw ContractError("vocab_size must exceed 5");
    if (max_len < 4) throw ContractError("max_len must be >= 4");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must be in [0,1)");
  }

  std::size_t head_dim() const { return hidden / n_heads; }

  /// 12 layers, 12 heads, hidden 768, ffn 3072, 512 positions.
  static ModelConfig base_scale(std::size_t vocab) {
    return {12, 12, 768, 3072, vocab, 512, 0.1};
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"hidden", c.hidden},
          {"ffn_dim", c.ffn_dim},   {"vocab_size", c.vocab_size},
          {"max_len", c.max_len},   {"dropout", c.dropout}};
}

/// Fields absent from `j` keep the values of `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  base.n_layers = j.value("n_layers", base.n_layers);
  base.n_heads = j.value("n_heads", base.n_heads);
  base.hidden = j.value("hidden", base.hidden);
  base.ffn_dim = j.value("ffn_dim", base.ffn_dim);
  base.vocab_size = j.value("vocab_size", base.vocab_size);
  base.max_len = j.value("max_len", base.max_len);
  base.dropout = j.value("dropout", base.dropout);
  return base;
}

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Biases and layer-norm parameters are stored as 1 x n matrices.
template <typename T>
struct LayerParams {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln1_gain, ln1_bias;
  Mat<T> w1, b1, w2, b2;
  Mat<T> ln2_gain, ln2_bias;
};

template <typename T>
struct Parameters {
  ModelConfig config;
  Mat<T> token_embedding;     // V x d
  Mat<T> position_embedding;  // max_len x d
  std::vector<LayerParams<T>> layers;
  Mat<T> mlm_weight, mlm_bias;  // d x V, 1 x V
  Mat<T> cls_weight, cls_bias;  // d x 2, 1 x 2
};

/// Calls f(name, tensor) for every tensor in a fixed order. That order is the
/// checkpoint manifest order and the order of random initialization.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f(std::string("token_embedding"), p.token_embedding);
  f(std::string("position_embedding"), p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    f(pre + "wq", L.wq);
    f(pre + "bq", L.bq);
    f(pre + "wk", L.wk);
    f(pre + "bk", L.bk);
    f(pre + "wv", L.wv);
    f(pre + "bv", L.bv);
    f(pre + "wo", L.wo);
    f(pre + "bo", L.bo);
    f(pre + "ln1_gain", L.ln1_gain);
    f(pre + "ln1_bias", L.ln1_bias);
    f(pre + "w1", L.w1);
    f(pre + "b1", L.b1);
    f(pre + "w2", L.w2);
    f(pre + "b2", L.b2);
    f(pre + "ln2_gain", L.ln2_gain);
    f(pre + "ln2_bias", L.ln2_bias);
  }
  f(std::string("mlm_weight"), p.mlm_weight);
  f(std::string("mlm_bias"), p.mlm_bias);
  f(std::string("cls_weight"), p.cls_weight);
  f(std::string("cls_bias"), p.cls_bias);
}

/// Zero-valued parameters with every tensor shaped per `c`.
template <typename T>
Parameters<T> zero_params(const ModelConfig& c) {
  c.validate();
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  const auto d = static_cast<Eigen::Index>(c.hidden);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim);
  Parameters<T> p;
  p.config = c;
  p.token_embedding = Mat<T>::Zero(V, d);
  p.position_embedding = Mat<T>::Zero(static_cast<Eigen::Index>(c.max_len), d);
  p.layers.resize(c.n_layers);
  for (auto& L : p.layers) {
    for (auto* w : {&L.wq, &L.wk, &L.wv, &L.wo}) *w = Mat<T>::Zero(d, d);
    for (auto* b : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_gain, &L.ln1_bias, &L.b2,
                    &L.ln2_gain, &L.ln2_bias})
      *b = Mat<T>::Zero(1, d);
    L.w1 = Mat<T>::Zero(d, f);
    L.b1 = Mat<T>::Zero(1, f);
    L.w2 = Mat<T>::Zero(f, d);
  }
  p.mlm_weight = Mat<T>::Zero(d, V);
  p.mlm_bias = Mat<T>::Zero(1, V);
  p.cls_weight = Mat<T>::Zero(d, 2);
  p.cls_bias = Mat<T>::Zero(1, 2);
  return p;
}

template <typename T>
Parameters<T> zeros_like(const Parameters<T>& p) {
  return zero_params<T>(p.config);
}

inline constexpr double kInitStd = 0.02;

namespace detail {
inline bool is_weight_matrix(const std::string& name) {
  const auto dot = name.rfind('.');
  const auto leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "token_embedding" || leaf == "position_embedding" || leaf == "wq" ||
         leaf == "wk" || leaf == "wv" || leaf == "wo" || leaf == "w1" || leaf == "w2" ||
         leaf == "cls_weight";
}
}  // namespace detail

/// N(0, 0.02^2) weights, zero biases, unit layer-norm gains, zero MLM head.
template <typename T>
Parameters<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = zero_params<T>(c);
  Rng rng = make_stream(seed, "init");
  for_each_tensor(p, [&](const std::string& name, Mat<T>& t) {
    if (detail::is_weight_matrix(name)) {
      for (Eigen::Index i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>(kInitStd * standard_normal(rng));
    } else if (name.ends_with("_gain")) {
      t.setOnes();
    }
  });
  return p;
}

/// Fresh random classification head drawn from its own stream.
template <typename T>
void reinit_cls_head(Parameters<T>& p, std::uint64_t seed) {
  Rng rng = make_stream(seed, "cls_head");
  for (Eigen::Index i = 0; i < p.cls_weight.size(); ++i)
    p.cls_weight.data()[i] = static_cast<T>(kInitStd * standard_normal(rng));
  p.cls_bias.setZero();
}

template <typename T>
std::size_t parameter_count(const Parameters<T>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Mat<T>& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <typename U, typename T>
Parameters<U> cast_params(const Parameters<T>& p) {
  auto out = zero_params<U>(p.config);
  std::vector<const Mat<T>*> src;
  for_each_tensor(p, [&](const std::string&, const Mat<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, Mat<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

/// Tensor-wise out += scale * g.
template <typename T>
void add_scaled(Parameters<T>& out, const Parameters<T>& g, T scale) {
  std::vector<const Mat<T>*> src;
  for_each_tensor(g, [&](const std::string&, const Mat<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, Mat<T>& t) { t.noalias() += scale * *src[i++]; });
}

template <typename T>
bool all_finite(const Parameters<T>& p) {
  bool ok = true;
  for_each_tensor(p, [&](const std::string&, const Mat<T>& t) { ok = ok && t.allFinite(); });
  return ok;
}

template <typename T>
bool bit_equal(const Mat<T>& a, const Mat<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

/// True when every encoder tensor (everything but the two heads) matches bit for bit.
template <typename T>
bool encoder_bit_equal(const Parameters<T>& a, const Parameters<T>& b) {
  if (!(a.config == b.config)) return false;
  std::vector<std::pair<std::string, const Mat<T>*>> ta;
  for_each_tensor(a, [&](const std::string& n, const Mat<T>& t) { ta.emplace_back(n, &t); });
  std::size_t i = 0;
  bool ok = true;
  for_each_tensor(b, [&](const std::string& n, const Mat<T>& t) {
    const auto& [name, other] = ta[i++];
    if (n.starts_with("mlm_") || n.starts_with("cls_")) return;
    ok = ok && bit_equal(*other, t);
  });
  return ok;
}

template <typename T>
bool bit_equal(const Parameters<T>& a, const Parameters<T>& b) {
  return encoder_bit_equal(a, b) && bit_equal(a.mlm_weight, b.mlm_weight) &&
         bit_equal(a.mlm_bias, b.mlm_bias) && bit_equal(a.cls_weight, b.cls_weight) &&
         bit_equal(a.cls_bias, b.cls_bias);
}

enum class Mode { mlm, cls, embed };

/// Masked positions of one sequence and the ids they replaced.
struct MaskPlan {
  std::vector<std::size_t> positions;  // strictly increasing
  std::vector<TokenId> original_ids;
  std::size_t k() const { return positions.size(); }
};

/// attention[layer][head] is max_len x max_len, rows = queries, cols = keys.
template <typename T>
using AttentionMap = std::vector<std::vector<Mat<T>>>;

template <typename T>
struct ForwardOutput {
  Mat<T> hidden_states;  // max_len x d
  Mat<T> cls_embedding;  // 1 x d
  AttentionMap<T> attention;
  std::optional<Mat<T>> mlm_logits;  // max_len x V
  std::optional<Mat<T>> cls_logits;  // 1 x 2
};

/// Dropout switch plus the stream its masks are drawn from.
struct DropoutContext {
  bool train = false;
  Rng* rng = nullptr;
};

inline constexpr double kLayerNormEps = 1e-12;

namespace detail {

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

/// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive.
template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p,
                    const DropoutContext& ctx) {
  if (!ctx.train || p <= 0.0 || ctx.rng == nullptr) return {};
  Mat<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = uniform01(*ctx.rng) < p ? T(0) : keep;
  return m;
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias,
                  LayerNormCache<T>& cache) {
  const auto d = static_cast<T>(x.cols());
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.rowwise().sum() / d;
  Mat<T> centered = x.colwise() - mean;
  const Eigen::Matrix<T, Eigen::Dynamic, 1> var = centered.rowwise().squaredNorm() / d;
  cache.rstd = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt().matrix();
  cache.xhat = centered.array().colwise() * cache.rstd.array();
  Mat<T> y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& gain,
                           const LayerNormCache<T>& cache, Mat<T>& dgain, Mat<T>& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<T>(dy.cols());
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dxhat = dxhat.rowwise().sum() / d;
  const Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dxhat_xhat =
      (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix() / d;
  Mat<T> dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx.array() -= cache.xhat.array().colwise() * mean_dxhat_xhat.array();
  dx.array().colwise() *= cache.rstd.array();
  return dx;
}

template <typename T>
struct LayerCache {
  Mat<T> x_in, q, k, v;
  std::vector<Mat<T>> probs;  // per head, rows x n_keys
  Mat<T> ctx;
  Mat<T> attn_mask;
  LayerNormCache<T> ln1;
  Mat<T> y1, f1, g;
  Mat<T> ffn_mask;
  LayerNormCache<T> ln2;
};

template <typename T>
struct Trace {
  std::vector<TokenId> ids;  // first `rows` ids
  Eigen::Index rows = 0;
  Eigen::Index n_keys = 0;  // real (non-pad) positions
  Mat<T> emb_mask;
  std::vector<LayerCache<T>> layers;
  Mat<T> hidden;
};

/// Forward pass over the first `rows` positions; only the first `n_keys`
/// positions are attendable. Rows past n_keys are pad queries and do not
/// influence real rows.
template <typename T>
Trace<T> run_encoder(const Parameters<T>& p, const std::vector<TokenId>& ids,
                     std::size_t rows, std::size_t n_keys, const DropoutContext& drop) {
  const auto& c = p.config;
  const auto n = static_cast<Eigen::Index>(rows);
  const auto m = static_cast<Eigen::Index>(n_keys);
  const auto d = static_cast<Eigen::Index>(c.hidden);
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  if (rows > c.max_len) throw ContractError("sequence longer than max_len");

  Trace<T> tr;
  tr.rows = n;
  tr.n_keys = m;
  tr.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(rows));
  Mat<T> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = tr.ids[static_cast<std::size_t>(i)];
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
      throw RangeError("token id " + std::to_string(id) + " >= vocab size " +
                       std::to_string(c.vocab_size));
    x.row(i) = p.token_embedding.row(id) + p.position_embedding.row(i);
  }
  tr.emb_mask = dropout_mask<T>(n, d, c.dropout, drop);
  if (tr.emb_mask.size()) x.array() *= tr.emb_mask.array();

  tr.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    auto& lc = tr.layers[l];
    lc.x_in = x;
    lc.q.noalias() = x * L.wq;
    lc.q.rowwise() += L.bq.row(0);
    lc.k.noalias() = x.topRows(m) * L.wk;
    lc.k.rowwise() += L.bk.row(0);
    lc.v.noalias() = x.topRows(m) * L.wv;
    lc.v.rowwise() += L.bv.row(0);
    lc.ctx.resize(n, d);
    lc.probs.resize(c.n_heads);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      Mat<T> s;
      s.noalias() = (lc.q.middleCols(off, dh) * lc.k.middleCols(off, dh).transpose()) * scale;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> mx = s.rowwise().maxCoeff();
      s.colwise() -= mx;
      s = s.array().exp();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> sum = s.rowwise().sum();
      s.array().colwise() /= sum.array();
      lc.ctx.middleCols(off, dh).noalias() = s * lc.v.middleCols(off, dh);
      lc.probs[h] = std::move(s);
    }
    Mat<T> attn;
    attn.noalias() = lc.ctx * L.wo;
    attn.rowwise() += L.bo.row(0);
    lc.attn_mask = dropout_mask<T>(n, d, c.dropout, drop);
    if (lc.attn_mask.size()) attn.array() *= lc.attn_mask.array();
    lc.y1 = layer_norm<T>(x + attn, L.ln1_gain, L.ln1_bias, lc.ln1);

    lc.f1.noalias() = lc.y1 * L.w1;
    lc.f1.rowwise() += L.b1.row(0);
    lc.g = lc.f1.unaryExpr([](T v) { return gelu(v); });
    Mat<T> f2;
    f2.noalias() = lc.g * L.w2;
    f2.rowwise() += L.b2.row(0);
    lc.ffn_mask = dropout_mask<T>(n, d, c.dropout, drop);
    if (lc.ffn_mask.size()) f2.array() *= lc.ffn_mask.array();
    x = layer_norm<T>(lc.y1 + f2, L.ln2_gain, L.ln2_bias, lc.ln2);
  }
  if (!x.allFinite()) throw NumericError("non-finite hidden state");
  tr.hidden = std::move(x);
  return tr;
}

/// Accumulates parameter gradients given d(loss)/d(hidden) for the traced rows.
template <typename T>
void backprop_encoder(const Parameters<T>& p, const Trace<T>& tr, Mat<T> dx,
                      Parameters<T>& grads) {
  const auto& c = p.config;
  const auto m = tr.n_keys;
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    auto& G = grads.layers[li];
    const auto& lc = tr.layers[li];

    Mat<T> dr2 = layer_norm_backward<T>(dx, L.ln2_gain, lc.ln2, G.ln2_gain, G.ln2_bias);
    Mat<T> df2 = lc.ffn_mask.size() ? Mat<T>(dr2.array() * lc.ffn_mask.array()) : dr2;
    G.w2.noalias() += lc.g.transpose() * df2;
    G.b2.row(0) += df2.colwise().sum();
    Mat<T> dg;
    dg.noalias() = df2 * L.w2.transpose();
    Mat<T> df1 = dg.array() * lc.f1.unaryExpr([](T v) { return gelu_grad(v); }).array();
    G.w1.noalias() += lc.y1.transpose() * df1;
    G.b1.row(0) += df1.colwise().sum();
    Mat<T> dy1 = dr2;
    dy1.noalias() += df1 * L.w1.transpose();

    Mat<T> dr1 = layer_norm_backward<T>(dy1, L.ln1_gain, lc.ln1, G.ln1_gain, G.ln1_bias);
    Mat<T> dattn = lc.attn_mask.size() ? Mat<T>(dr1.array() * lc.attn_mask.array()) : dr1;
    G.wo.noalias() += lc.ctx.transpose() * dattn;
    G.bo.row(0) += dattn.colwise().sum();
    Mat<T> dctx;
    dctx.noalias() = dattn * L.wo.transpose();

    Mat<T> dq = Mat<T>::Zero(lc.q.rows(), lc.q.cols());
    Mat<T> dk = Mat<T>::Zero(m, lc.k.cols());
    Mat<T> dv = Mat<T>::Zero(m, lc.v.cols());
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      const Mat<T>& P = lc.probs[h];
      const auto dctx_h = dctx.middleCols(off, dh);
      Mat<T> dP;
      dP.noalias() = dctx_h * lc.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh).noalias() += P.transpose() * dctx_h;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
      Mat<T> dS = P.array() * (dP.colwise() - rowdot).array();
      dS *= scale;
      dq.middleCols(off, dh).noalias() += dS * lc.k.middleCols(off, dh);
      dk.middleCols(off, dh).noalias() += dS.transpose() * lc.q.middleCols(off, dh);
    }
    G.wq.noalias() += lc.x_in.transpose() * dq;
    G.bq.row(0) += dq.colwise().sum();
    G.wk.noalias() += lc.x_in.topRows(m).transpose() * dk;
    G.bk.row(0) += dk.colwise().sum();
    G.wv.noalias() += lc.x_in.topRows(m).transpose() * dv;
    G.bv.row(0) += dv.colwise().sum();

    dx = dr1;
    dx.noalias() += dq * L.wq.transpose();
    dx.topRows(m).noalias() += dk * L.wk.transpose();
    dx.topRows(m).noalias() += dv * L.wv.transpose();
  }
  if (tr.emb_mask.size()) dx.array() *= tr.emb_mask.array();
  for (Eigen::Index i = 0; i < tr.rows; ++i) {
    grads.token_embedding.row(tr.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

/// -log softmax(logits)[target] and, optionally, its gradient w.r.t. logits.
template <typename T>
double cross_entropy(const Eigen::Ref<const Mat<T>>& logits_row, Eigen::Index target,
                     Mat<T>* dlogits = nullptr, double scale = 1.0) {
  const Eigen::Index V = logits_row.cols();
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(logits_row(0, j)));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < V; ++j) sum += std::exp(static_cast<double>(logits_row(0, j)) - mx);
  const double lse = mx + std::log(sum);
  const double loss = lse - static_cast<double>(logits_row(0, target));
  if (dlogits) {
    dlogits->resize(1, V);
    for (Eigen::Index j = 0; j < V; ++j) {
      const double pj = std::exp(static_cast<double>(logits_row(0, j)) - lse);
      (*dlogits)(0, j) = static_cast<T>(scale * (pj - (j == target ? 1.0 : 0.0)));
    }
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

}  // namespace detail

/// Full forward pass over all max_len positions. mlm_logits are produced only
/// in Mode::mlm, cls_logits only in Mode::cls.
template <typename T>
ForwardOutput<T> forward(const Parameters<T>& p, const TokenSequence& seq, Mode mode,
                         const DropoutContext& drop = {}) {
  const auto& c = p.config;
  if (seq.ids.size() != c.max_len)
    throw ContractError("sequence length " + std::to_string(seq.ids.size()) +
                        " != model max_len " + std::to_string(c.max_len));
  const auto tr = detail::run_encoder(p, seq.ids, c.max_len, seq.n_real, drop);
  ForwardOutput<T> out;
  out.hidden_states = tr.hidden;
  out.cls_embedding = tr.hidden.topRows(1);
  const auto L = static_cast<Eigen::Index>(c.max_len);
  out.attention.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (const auto& P : tr.layers[l].probs) {
      Mat<T> full = Mat<T>::Zero(L, L);
      full.leftCols(P.cols()) = P;
      out.attention[l].push_back(std::move(full));
    }
  }
  if (mode == Mode::mlm) {
    Mat<T> logits = tr.hidden * p.mlm_weight;
    logits.rowwise() += p.mlm_bias.row(0);
    out.mlm_logits = std::move(logits);
  } else if (mode == Mode::cls) {
    Mat<T> logits = out.cls_embedding * p.cls_weight + p.cls_bias;
    out.cls_logits = std::move(logits);
  }
  return out;
}

/// Mean over masked positions of -log p(original token).
template <typename T>
double loss_mlm(const ForwardOutput<T>& out, const MaskPlan& plan) {
  if (!out.mlm_logits) throw ContractError("loss_mlm: forward was not run in mlm mode");
  if (plan.k() == 0) throw ContractError("loss_mlm: mask plan is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < plan.k(); ++i)
    total += detail::cross_entropy<T>(out.mlm_logits->row(static_cast<Eigen::Index>(plan.positions[i])),
                                      plan.original_ids[i]);
  return total / static_cast<double>(plan.k());
}

template <typename T>
double loss_cls(const ForwardOutput<T>& out, int label) {
  if (!out.cls_logits) throw ContractError("loss_cls: forward was not run in cls mode");
  if (label != 0 && label != 1) throw ContractError("loss_cls: label must be 0 or 1");
  return detail::cross_entropy<T>(*out.cls_logits, label);
}

/// Masked-LM loss of one (already masked) sequence; when `grads` is given,
/// adds scale * d(loss)/d(params) into it. Only real rows are computed.
template <typename T>
double mlm_step(const Parameters<T>& p, const TokenSequence& masked, const MaskPlan& plan,
                Parameters<T>* grads, T scale = T(1), const DropoutContext& drop = {}) {
  if (plan.k() == 0) throw ContractError("mlm_step: mask plan is empty");
  const auto tr = detail::run_encoder(p, masked.ids, masked.n_real, masked.n_real, drop);
  const auto K = plan.k();
  double loss = 0.0;
  Mat<T> dh;
  if (grads) dh = Mat<T>::Zero(tr.hidden.rows(), tr.hidden.cols());
  Mat<T> dlogits;
  for (std::size_t i = 0; i < K; ++i) {
    const auto pos = static_cast<Eigen::Index>(plan.positions[i]);
    Mat<T> logits = tr.hidden.row(pos) * p.mlm_weight + p.mlm_bias;
    loss += detail::cross_entropy<T>(logits, plan.original_ids[i], grads ? &dlogits : nullptr,
                                     static_cast<double>(scale) / static_cast<double>(K));
    if (grads) {
      grads->mlm_weight.noalias() += tr.hidden.row(pos).transpose() * dlogits;
      grads->mlm_bias += dlogits;
      dh.row(pos).noalias() += dlogits * p.mlm_weight.transpose();
    }
  }
  if (grads) detail::backprop_encoder(p, tr, std::move(dh), *grads);
  return loss / static_cast<double>(K);
}

/// Classification loss from the [CLS] row; gradient accumulation as mlm_step.
template <typename T>
double cls_step(const Parameters<T>& p, const TokenSequence& seq, int label,
                Parameters<T>* grads, T scale = T(1), const DropoutContext& drop = {},
                Mat<T>* logits_out = nullptr) {
  if (label != 0 && label != 1) throw ContractError("cls_step: label must be 0 or 1");
  const auto tr = detail::run_encoder(p, seq.ids, seq.n_real, seq.n_real, drop);
  Mat<T> logits = tr.hidden.topRows(1) * p.cls_weight + p.cls_bias;
  if (logits_out) *logits_out = logits;
  Mat<T> dlogits;
  const double loss = detail::cross_entropy<T>(logits, label, grads ? &dlogits : nullptr,
                                               static_cast<double>(scale));
  if (grads) {
    grads->cls_weight.noalias() += tr.hidden.topRows(1).transpose() * dlogits;
    grads->cls_bias += dlogits;
    Mat<T> dh = Mat<T>::Zero(tr.hidden.rows(), tr.hidden.cols());
    dh.row(0).noalias() = dlogits * p.cls_weight.transpose();
    detail::backprop_encoder(p, tr, std::move(dh), *grads);
  }
  return loss;
}

/// Positive-class probability of one sequence (dropout off).
template <typename T>
double positive_score(const Parameters<T>& p, const TokenSequence& seq) {
  const auto tr = detail::run_encoder(p, seq.ids, seq.n_real, seq.n_real, {});
  const Mat<T> logits = tr.hidden.topRows(1) * p.cls_weight + p.cls_bias;
  const double a = static_cast<double>(logits(0, 0));
  const double b = static_cast<double>(logits(0, 1));
  return 1.0 / (1.0 + std::exp(a - b));
}

/// [CLS] embedding computed over real positions only.
template <typename T>
Mat<T> embed_cls(const Parameters<T>& p, const TokenSequence& seq) {
  const auto tr = detail::run_encoder(p, seq.ids, seq.n_real, seq.n_real, {});
  return tr.hidden.topRows(1);
}

/// Exact gradients of loss_mlm (target = mask plan) for a masked sequence.
template <typename T>
Parameters<T> backward_mlm(const Parameters<T>& p, const TokenSequence& masked,
                           const MaskPlan& plan, const DropoutContext& drop = {}) {
  auto g = zeros_like(p);
  mlm_step(p, masked, plan, &g, T(1), drop);
  return g;
}

/// Exact gradients of loss_cls (target = label).
template <typename T>
Parameters<T> backward_cls(const Parameters<T>& p, const TokenSequence& seq, int label,
                           const DropoutContext& drop = {}) {
  auto g = zeros_like(p);
  cls_step(p, seq, label, &g, T(1), drop);
  return g;
}

}  // namespace ptab::nn
