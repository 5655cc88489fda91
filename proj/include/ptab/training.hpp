#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/checkpoint.hpp"
#include "ptab/encoder.hpp"
#include "ptab/error.hpp"
#include "ptab/metrics.hpp"
#include "ptab/rng.hpp"
#include "ptab/textualizer.hpp"
#include "ptab/tokenizer.hpp"

namespace ptab {

using nn::MaskPlan;

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t epochs = 5;
  /// Negative: 10% of the run's total optimizer steps.
  long warmup_steps = -1;
  double mask_ratio = 0.15;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  /// 80/10/10 corruption of masked positions instead of literal [MASK] only.
  bool bert_corruption = false;

  void validate() const {
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    if (!(mask_ratio > 0.0 && mask_ratio <= 1.0))
      throw ContractError("mask_ratio must be in (0, 1]");
    if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  }

  /// Desk-scale masked-language defaults: 5 epochs, batch 16, 15% masking.
  static TrainConfig mf_defaults() { return {}; }

  /// Desk-scale classification defaults: 20 epochs, batch 16, no warmup.
  static TrainConfig cf_defaults() {
    TrainConfig c;
    c.learning_rate = 5e-4;
    c.epochs = 20;
    c.warmup_steps = 0;
    return c;
  }

  /// Settings used with a pre-trained base-size encoder: lr 4e-5, 10 epochs.
  static TrainConfig mf_base_scale() {
    TrainConfig c;
    c.learning_rate = 4e-5;
    c.epochs = 10;
    return c;
  }

  /// lr 2e-5, 40 epochs.
  static TrainConfig cf_base_scale() {
    TrainConfig c = cf_defaults();
    c.learning_rate = 2e-5;
    c.epochs = 40;
    return c;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},         {"warmup_steps", c.warmup_steps},
          {"mask_ratio", c.mask_ratio}, {"seed", c.seed},
          {"beta1", c.beta1},           {"beta2", c.beta2},
          {"epsilon", c.epsilon},       {"clip_norm", c.clip_norm},
          {"bert_corruption", c.bert_corruption}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  base.batch_size = j.value("batch_size", base.batch_size);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.epochs = j.value("epochs", base.epochs);
  base.warmup_steps = j.value("warmup_steps", base.warmup_steps);
  base.mask_ratio = j.value("mask_ratio", base.mask_ratio);
  base.seed = j.value("seed", base.seed);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.epsilon = j.value("epsilon", base.epsilon);
  base.clip_norm = j.value("clip_norm", base.clip_norm);
  base.bert_corruption = j.value("bert_corruption", base.bert_corruption);
  return base;
}

/// base_lr * min(1, step / warmup_steps); constant once warm.
inline double lr_at(std::size_t step, double base_lr, std::size_t warmup_steps) {
  if (step < 1) throw ContractError("lr_at: step must be >= 1");
  if (warmup_steps == 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

inline std::size_t resolve_warmup(const TrainConfig& c, std::size_t total_steps) {
  if (c.warmup_steps >= 0) return static_cast<std::size_t>(c.warmup_steps);
  return total_steps / 10;
}

template <typename T>
struct OptimizerState {
  nn::Parameters<T> m;
  nn::Parameters<T> v;
  std::size_t step = 0;

  explicit OptimizerState(const nn::ModelConfig& c)
      : m(nn::zero_params<T>(c)), v(nn::zero_params<T>(c)) {}
};

/// Global L2 norm over every gradient tensor.
template <typename T>
double global_norm(const nn::Parameters<T>& g) {
  double ss = 0.0;
  nn::for_each_tensor(g, [&](const std::string&, const nn::Mat<T>& t) {
    ss += t.template cast<double>().squaredNorm();
  });
  return std::sqrt(ss);
}

/// Bias-corrected Adam. Gradients are first rescaled to `clip_norm` when their
/// global norm exceeds it. Non-finite gradients abort the step untouched.
template <typename T>
void adam_step(nn::Parameters<T>& params, nn::Parameters<T> grads, OptimizerState<T>& state,
               double lr, const TrainConfig& cfg) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("adam_step: non-finite gradient");
  if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
    const T s = static_cast<T>(cfg.clip_norm / norm);
    nn::for_each_tensor(grads, [&](const std::string&, nn::Mat<T>& t) { t *= s; });
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.epsilon);

  std::vector<nn::Mat<T>*> P, M, V;
  nn::for_each_tensor(params, [&](const std::string&, nn::Mat<T>& t) { P.push_back(&t); });
  nn::for_each_tensor(state.m, [&](const std::string&, nn::Mat<T>& t) { M.push_back(&t); });
  nn::for_each_tensor(state.v, [&](const std::string&, nn::Mat<T>& t) { V.push_back(&t); });
  std::size_t i = 0;
  nn::for_each_tensor(grads, [&](const std::string&, const nn::Mat<T>& g) {
    auto& m = *M[i];
    auto& v = *V[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    P[i]->array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
    ++i;
  });
}

/// Positions of real, non-special tokens.
inline std::vector<std::size_t> eligible_positions(const TokenSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seq.n_real; ++i)
    if (!is_special(seq.ids[i])) out.push_back(i);
  return out;
}

struct MaskedSequence {
  TokenSequence seq;
  MaskPlan plan;
};

/// Each eligible position is masked independently with probability `ratio`;
/// if none is drawn, one uniformly chosen eligible position is masked.
/// Returns nullopt when the sequence has no eligible position (skip it).
inline std::optional<MaskedSequence> plan_mask(const TokenSequence& seq, double ratio,
                                               Rng& rng, bool bert_corruption = false,
                                               std::size_t vocab_size = 0) {
  const auto eligible = eligible_positions(seq);
  if (eligible.empty()) return std::nullopt;
  MaskedSequence out{seq, {}};
  for (auto pos : eligible)
    if (uniform01(rng) < ratio) out.plan.positions.push_back(pos);
  if (out.plan.positions.empty())
    out.plan.positions.push_back(eligible[uniform_index(rng, eligible.size())]);
  for (auto pos : out.plan.positions) {
    out.plan.original_ids.push_back(seq.ids[pos]);
    TokenId replacement = kMask;
    if (bert_corruption && vocab_size > kNumSpecials) {
      const double u = uniform01(rng);
      if (u >= 0.9) {
        replacement = seq.ids[pos];
      } else if (u >= 0.8) {
        replacement = static_cast<TokenId>(
            kNumSpecials + uniform_index(rng, vocab_size - kNumSpecials));
      }
    }
    out.seq.ids[pos] = replacement;
  }
  return out;
}

struct TrainEvent {
  Stage stage = Stage::mf;
  std::size_t epoch = 0;
  std::string split;  // "train" | "val"
  double loss = 0.0;
  std::optional<double> auc;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the stage started
};

inline nlohmann::json to_json(const TrainEvent& e) {
  nlohmann::json j = {{"stage", to_string(e.stage)}, {"epoch", e.epoch},
                      {"split", e.split},            {"loss", e.loss},
                      {"lr", e.lr},                  {"wall_time", e.wall_time}};
  j["auc"] = e.auc ? nlohmann::json(*e.auc) : nlohmann::json(nullptr);
  return j;
}

using EventSink = std::function<void(const TrainEvent&)>;

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auc;
};

struct TrainResult {
  nn::Parameters<float> params;  // the selected snapshot
  CheckpointMeta meta;
  std::vector<EpochRecord> history;
  double first_batch_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
};

inline std::vector<TokenSequence> encode_corpus(const Corpus& c, const Vocabulary& vocab,
                                                std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(c.size());
  for (const auto& s : c.sentences) out.push_back(encode(s, vocab, max_len));
  return out;
}

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

/// Fixed validation mask plans, drawn once so every epoch is scored alike.
inline std::vector<MaskedSequence> frozen_val_plans(const std::vector<TokenSequence>& seqs,
                                                    const TrainConfig& cfg) {
  Rng rng = make_stream(cfg.seed, "val_mask");
  std::vector<MaskedSequence> out;
  for (const auto& s : seqs)
    if (auto m = plan_mask(s, cfg.mask_ratio, rng)) out.push_back(std::move(*m));
  return out;
}

inline double mlm_eval_loss(const nn::Parameters<float>& p,
                            const std::vector<MaskedSequence>& plans) {
  if (plans.empty()) return 0.0;
  double total = 0.0;
  for (const auto& m : plans) total += nn::mlm_step<float>(p, m.seq, m.plan, nullptr);
  return total / static_cast<double>(plans.size());
}

inline nlohmann::json provenance_json(const Corpus& c) { return c.provenance; }
}  // namespace detail

/// Scores (positive-class probabilities) for each sequence, dropout off.
inline std::vector<double> score_sequences(const nn::Parameters<float>& p,
                                           const std::vector<TokenSequence>& seqs) {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(nn::positive_score(p, s));
  return out;
}

/// Masked-language fine-tuning. Keeps the epoch snapshot with the lowest
/// validation loss; with zero epochs the initialization is returned.
inline TrainResult mf_train(const Corpus& corpus, const Vocabulary& vocab,
                            const TrainConfig& cfg, nn::ModelConfig model_cfg,
                            const Corpus& val_corpus,
                            const nn::Parameters<float>* init = nullptr,
                            const EventSink& on_event = {}) {
  cfg.validate();
  if (corpus.size() == 0) throw ContractError("mf_train: empty training corpus");
  if (val_corpus.size() == 0) throw ContractError("mf_train: empty validation corpus");
  model_cfg.vocab_size = vocab.size();
  const auto t0 = std::chrono::steady_clock::now();

  const auto train = encode_corpus(corpus, vocab, model_cfg.max_len);
  const auto val_plans = detail::frozen_val_plans(encode_corpus(val_corpus, vocab, model_cfg.max_len), cfg);

  TrainResult res;
  res.params = init ? *init : nn::init_params<float>(model_cfg, cfg.seed);
  if (!(res.params.config == model_cfg))
    throw ContractError("mf_train: initial parameters do not match the model config");
  OptimizerState<float> opt(model_cfg);
  Rng shuffle_rng = make_stream(cfg.seed, "shuffle_mf");
  Rng mask_rng = make_stream(cfg.seed, "mask");
  Rng drop_rng = make_stream(cfg.seed, "dropout_mf");
  const nn::DropoutContext drop{true, &drop_rng};
  const std::size_t total_steps = cfg.epochs * detail::steps_per_epoch(train.size(), cfg.batch_size);
  const std::size_t warmup = resolve_warmup(cfg, total_steps);

  res.meta.stage = Stage::mf;
  res.meta.provenance = corpus.provenance;
  res.meta.vocab = vocab;
  res.meta.config_digest = json_digest({{"model", nn::to_json(model_cfg)}, {"train", to_json(cfg)}});
  res.meta.epoch = 0;
  nn::Parameters<float> params = res.params;
  if (cfg.epochs == 0) {
    res.meta.metric = detail::mlm_eval_loss(params, val_plans);
    return res;
  }

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<MaskedSequence> batch;
      for (std::size_t j = b; j < std::min(order.size(), b + cfg.batch_size); ++j)
        if (auto m = plan_mask(train[order[j]], cfg.mask_ratio, mask_rng, cfg.bert_corruption,
                               model_cfg.vocab_size))
          batch.push_back(std::move(*m));
      if (batch.empty()) continue;
      auto grads = nn::zeros_like(params);
      const float scale = 1.0f / static_cast<float>(batch.size());
      double batch_loss = 0.0;
      for (const auto& m : batch) batch_loss += nn::mlm_step<float>(params, m.seq, m.plan, &grads, scale, drop);
      batch_loss /= static_cast<double>(batch.size());
      if (std::isnan(res.first_batch_loss)) res.first_batch_loss = batch_loss;
      lr = lr_at(opt.step + 1, cfg.learning_rate, warmup);
      adam_step(params, std::move(grads), opt, lr, cfg);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
      epoch_count += batch.size();
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.train_loss = epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0;
    rec.val_loss = detail::mlm_eval_loss(params, val_plans);
    res.history.push_back(rec);
    if (on_event) {
      on_event({Stage::mf, e, "train", rec.train_loss, std::nullopt, lr, detail::seconds_since(t0)});
      on_event({Stage::mf, e, "val", rec.val_loss, std::nullopt, lr, detail::seconds_since(t0)});
    }
    if (rec.val_loss < best) {
      best = rec.val_loss;
      res.params = params;
      res.meta.epoch = e;
      res.meta.metric = rec.val_loss;
    }
  }
  res.steps = opt.step;
  return res;
}

/// Classification fine-tuning. `init` must be an MF checkpoint; nullptr starts
/// from a fresh random encoder (the no-MF ablation). The classification head is
/// always re-initialized. Keeps the snapshot with the best validation AUC.
inline TrainResult cf_train(const Corpus& corpus, const Checkpoint* init, const Vocabulary& vocab,
                            const TrainConfig& cfg, nn::ModelConfig model_cfg,
                            const Corpus& val_corpus, const EventSink& on_event = {}) {
  cfg.validate();
  if (!corpus.labels) throw ContractError("cf_train: training corpus has no labels");
  if (!val_corpus.labels) throw ContractError("cf_train: validation corpus has no labels");
  if (corpus.size() == 0) throw ContractError("cf_train: empty training corpus");
  const auto t0 = std::chrono::steady_clock::now();

  nn::Parameters<float> params;
  if (init) {
    if (init->meta.stage != Stage::mf)
      throw ContractError("cf_train: initial checkpoint must come from the MF stage");
    params = init->params;
    model_cfg = params.config;
  } else {
    model_cfg.vocab_size = vocab.size();
    params = nn::init_params<float>(model_cfg, cfg.seed);
  }
  if (model_cfg.vocab_size != vocab.size())
    throw ContractError("cf_train: vocabulary size differs from the checkpoint's");
  nn::reinit_cls_head(params, cfg.seed);

  const auto train = encode_corpus(corpus, vocab, model_cfg.max_len);
  const auto val = encode_corpus(val_corpus, vocab, model_cfg.max_len);
  const auto& y = *corpus.labels;
  const auto& val_y = *val_corpus.labels;

  TrainResult res;
  res.params = params;
  res.meta.stage = Stage::cf;
  res.meta.provenance = corpus.provenance;
  res.meta.vocab = vocab;
  res.meta.config_digest = json_digest({{"model", nn::to_json(model_cfg)}, {"train", to_json(cfg)}});
  auto evaluate = [&](const nn::Parameters<float>& p, double& loss) {
    std::vector<double> scores = score_sequences(p, val);
    loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double s = std::clamp(scores[i], 1e-12, 1.0 - 1e-12);
      loss -= val_y[i] ? std::log(s) : std::log(1.0 - s);
    }
    loss /= static_cast<double>(std::max<std::size_t>(scores.size(), 1));
    return auc(scores, val_y);
  };
  if (cfg.epochs == 0) {
    double loss;
    res.meta.metric = evaluate(params, loss);
    return res;
  }

  OptimizerState<float> opt(model_cfg);
  Rng shuffle_rng = make_stream(cfg.seed, "shuffle_cf");
  Rng drop_rng = make_stream(cfg.seed, "dropout_cf");
  const nn::DropoutContext drop{true, &drop_rng};
  const std::size_t total_steps = cfg.epochs * detail::steps_per_epoch(train.size(), cfg.batch_size);
  const std::size_t warmup = resolve_warmup(cfg, total_steps);

  double best = -1.0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      auto grads = nn::zeros_like(params);
      const float scale = 1.0f / static_cast<float>(end - b);
      double batch_loss = 0.0;
      for (std::size_t j = b; j < end; ++j)
        batch_loss += nn::cls_step<float>(params, train[order[j]], y[order[j]], &grads, scale, drop);
      if (std::isnan(res.first_batch_loss))
        res.first_batch_loss = batch_loss / static_cast<double>(end - b);
      lr = lr_at(opt.step + 1, cfg.learning_rate, warmup);
      adam_step(params, std::move(grads), opt, lr, cfg);
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.train_loss = epoch_loss / static_cast<double>(train.size());
    rec.val_auc = evaluate(params, rec.val_loss);
    res.history.push_back(rec);
    if (on_event) {
      on_event({Stage::cf, e, "train", rec.train_loss, std::nullopt, lr, detail::seconds_since(t0)});
      on_event({Stage::cf, e, "val", rec.val_loss, rec.val_auc, lr, detail::seconds_since(t0)});
    }
    if (*rec.val_auc > best) {
      best = *rec.val_auc;
      res.params = params;
      res.meta.epoch = e;
      res.meta.metric = *rec.val_auc;
    }
  }
  res.steps = opt.step;
  return res;
}

}  // namespace ptab
