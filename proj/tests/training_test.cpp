#include <gtest/gtest.h>

#include <cmath>

#include "ptab/synthetic.hpp"
#include "ptab/training.hpp"

namespace {

using namespace ptab;

TokenSequence seq_of(std::vector<TokenId> ids, std::size_t max_len) {
  TokenSequence s;
  s.n_real = ids.size();
  s.ids = std::move(ids);
  s.ids.resize(max_len, kPad);
  s.pad_mask.assign(max_len, 0);
  return s;
}

TEST(PlanMask, NeverMasksSpecialsAndForcesOne) {
  const auto s = seq_of({kCls, 7, kSep, kUnk, 8, kMask}, 8);
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    const auto m = plan_mask(s, 0.01, rng);
    ASSERT_TRUE(m.has_value());
    ASSERT_GE(m->plan.k(), 1u);
    for (std::size_t i = 0; i < m->plan.k(); ++i) {
      const auto pos = m->plan.positions[i];
      EXPECT_TRUE(pos == 1 || pos == 4);
      EXPECT_EQ(m->seq.ids[pos], kMask);
      EXPECT_EQ(m->plan.original_ids[i], s.ids[pos]);
    }
  }
  EXPECT_FALSE(plan_mask(seq_of({kCls, kSep}, 4), 0.5, rng).has_value());
}

TEST(PlanMask, RatioOneMasksAllEligible) {
  Rng rng(0);
  const auto m = plan_mask(seq_of({kCls, 7, 8, kSep, 9}, 6), 1.0, rng);
  EXPECT_EQ(m->plan.positions, (std::vector<std::size_t>{1, 2, 4}));
}

TEST(PlanMask, FractionNearRatio) {
  std::vector<TokenId> ids = {kCls};
  for (int i = 0; i < 40; ++i) ids.push_back(static_cast<TokenId>(10 + i));
  ids.push_back(kSep);
  const auto s = seq_of(ids, 48);
  Rng rng(7);
  double total = 0.0;
  for (int t = 0; t < 10000; ++t) total += static_cast<double>(plan_mask(s, 0.15, rng)->plan.k()) / 40.0;
  EXPECT_NEAR(total / 10000.0, 0.15, 0.01);
}

TEST(PlanMask, BertCorruptionKeepsTargets) {
  std::vector<TokenId> ids = {kCls};
  for (int i = 0; i < 40; ++i) ids.push_back(static_cast<TokenId>(10 + i));
  const auto s = seq_of(ids, 41);
  Rng rng(3);
  std::size_t masked = 0, kept = 0, random = 0;
  for (int t = 0; t < 2000; ++t) {
    const auto m = plan_mask(s, 0.15, rng, true, 60);
    for (std::size_t i = 0; i < m->plan.k(); ++i) {
      const auto id = m->seq.ids[m->plan.positions[i]];
      if (id == kMask) ++masked;
      else if (id == m->plan.original_ids[i]) ++kept;
      else ++random;
      EXPECT_GE(id, kMask);
      EXPECT_LT(id, 60);
    }
  }
  const double n = static_cast<double>(masked + kept + random);
  EXPECT_NEAR(masked / n, 0.8, 0.03);
  EXPECT_NEAR(kept / n, 0.1 + 0.1 / 55.0, 0.03);
}

TEST(Schedule, LinearWarmupThenConstant) {
  EXPECT_DOUBLE_EQ(lr_at(1, 1e-3, 10), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(5, 1e-3, 10), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(10, 1e-3, 10), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(500, 1e-3, 10), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(1, 2e-5, 0), 2e-5);
  EXPECT_THROW(lr_at(0, 1e-3, 10), ContractError);
  TrainConfig c;
  EXPECT_EQ(resolve_warmup(c, 250), 25u);
  c.warmup_steps = 7;
  EXPECT_EQ(resolve_warmup(c, 250), 7u);
}

nn::ModelConfig tiny() {
  nn::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.hidden = 2;
  c.ffn_dim = 2;
  c.vocab_size = 6;
  c.max_len = 4;
  return c;
}

TEST(Adam, TwoStepsByHand) {
  auto p = nn::zero_params<double>(tiny());
  OptimizerState<double> st(tiny());
  TrainConfig cfg;
  cfg.clip_norm = 0.0;
  auto g = nn::zero_params<double>(tiny());
  g.cls_bias << 0.5, -2.0;
  adam_step(p, g, st, 0.1, cfg);
  // step 1: m_hat = g, v_hat = g^2, so the update is lr * sign(g) (up to eps)
  EXPECT_NEAR(p.cls_bias(0, 0), -0.1, 1e-7);
  EXPECT_NEAR(p.cls_bias(0, 1), 0.1, 1e-7);
  g.cls_bias << 1.0, 0.0;
  adam_step(p, g, st, 0.1, cfg);
  const double m = 0.9 * 0.05 + 0.1 * 1.0, v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double p0 = -0.1 * 0.5 / (0.5 + 1e-8), p1 = 0.1 * 2.0 / (2.0 + 1e-8);
  EXPECT_NEAR(p.cls_bias(0, 0), p0 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
  const double m1 = 0.9 * -0.2, v1 = 0.999 * 0.004;
  EXPECT_NEAR(p.cls_bias(0, 1), p1 - 0.1 * (m1 / 0.19) / (std::sqrt(v1 / (1 - 0.998001)) + 1e-8), 1e-12);
  EXPECT_EQ(st.step, 2u);
  EXPECT_TRUE(p.token_embedding.isZero(0));
}

TEST(Adam, ClippingAndNonFinite) {
  auto g = nn::zero_params<double>(tiny());
  g.cls_bias << 30.0, 40.0;
  EXPECT_DOUBLE_EQ(global_norm(g), 50.0);
  TrainConfig cfg;
  cfg.clip_norm = 5.0;
  auto p = nn::zero_params<double>(tiny());
  OptimizerState<double> st(tiny());
  adam_step(p, g, st, 0.1, cfg);
  EXPECT_NEAR(st.m.cls_bias(0, 0), 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(st.m.cls_bias(0, 1), 0.1 * 4.0, 1e-12);
  g.cls_bias(0, 0) = std::nan("");
  EXPECT_THROW(adam_step(p, g, st, 0.1, cfg), NumericError);
  EXPECT_EQ(st.step, 1u);
}

struct Fixture {
  Corpus train, val;
  Vocabulary vocab;
  nn::ModelConfig model;
};

Fixture make_fixture(std::size_t rows = 400) {
  SyntheticSpec spec;
  spec.rows = rows;
  const auto ds = make_synthetic(spec);
  const auto c = textualize_dataset(ds);
  const auto plan = make_folds(ds.labels, 5, 0);
  Fixture f;
  f.train = select_sentences(c, plan.folds[0].train, true);
  f.val = select_sentences(c, plan.folds[0].val, true);
  f.vocab = build_vocab({f.train});
  f.model.hidden = 32;
  f.model.ffn_dim = 64;
  f.model.max_len = 32;
  return f;
}

TEST(MfTrain, ZeroEpochsReturnsInit) {
  auto f = make_fixture();
  auto cfg = TrainConfig::mf_defaults();
  cfg.epochs = 0;
  cfg.seed = 5;
  const auto r = mf_train(f.train, f.vocab, cfg, f.model, f.val);
  f.model.vocab_size = f.vocab.size();
  EXPECT_TRUE(nn::bit_equal(r.params, nn::init_params<float>(f.model, 5)));
  EXPECT_EQ(r.meta.epoch, 0u);
  EXPECT_NEAR(r.meta.metric, std::log(static_cast<double>(f.vocab.size())), 1e-5);
}

TEST(MfTrain, LossDropsAndRunIsDeterministic) {
  const auto f = make_fixture();
  auto cfg = TrainConfig::mf_defaults();
  cfg.epochs = 3;
  std::vector<TrainEvent> events;
  const auto a = mf_train(f.train, f.vocab, cfg, f.model, f.val, nullptr,
                          [&](const TrainEvent& e) { events.push_back(e); });
  EXPECT_NEAR(a.first_batch_loss, std::log(static_cast<double>(f.vocab.size())), 1e-5);
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_LT(a.history.back().val_loss, a.history.front().val_loss);
  EXPECT_LT(a.history.back().val_loss, 0.8 * std::log(static_cast<double>(f.vocab.size())));
  EXPECT_EQ(events.size(), 6u);
  EXPECT_EQ(events[1].split, "val");
  EXPECT_EQ(a.meta.stage, Stage::mf);
  EXPECT_GE(a.meta.epoch, 1u);
  EXPECT_EQ(a.meta.provenance.at("synthetic"), f.train.size());

  const auto b = mf_train(f.train, f.vocab, cfg, f.model, f.val);
  EXPECT_TRUE(nn::bit_equal(a.params, b.params));
  cfg.seed = 1;
  const auto c = mf_train(f.train, f.vocab, cfg, f.model, f.val);
  EXPECT_FALSE(nn::bit_equal(a.params, c.params));
}

TEST(CfTrain, StartsFromMfEncoderAndLearns) {
  const auto f = make_fixture(600);
  auto mcfg = TrainConfig::mf_defaults();
  mcfg.epochs = 2;
  const auto mf = mf_train(f.train, f.vocab, mcfg, f.model, f.val);
  const Checkpoint ck{mf.params, mf.meta};

  auto ccfg = TrainConfig::cf_defaults();
  ccfg.epochs = 0;
  const auto untouched = cf_train(f.train, &ck, f.vocab, ccfg, f.model, f.val);
  EXPECT_TRUE(nn::encoder_bit_equal(untouched.params, mf.params));
  EXPECT_TRUE(nn::bit_equal(untouched.params.mlm_weight, mf.params.mlm_weight));

  ccfg.epochs = 20;
  ccfg.learning_rate = 1e-3;
  const auto cf = cf_train(f.train, &ck, f.vocab, ccfg, f.model, f.val);
  EXPECT_EQ(cf.meta.stage, Stage::cf);
  EXPECT_GT(cf.meta.metric, 0.9);

  CheckpointMeta wrong = mf.meta;
  wrong.stage = Stage::cf;
  const Checkpoint bad{mf.params, wrong};
  EXPECT_THROW(cf_train(f.train, &bad, f.vocab, ccfg, f.model, f.val), ContractError);
  Corpus unlabeled = f.train;
  unlabeled.labels.reset();
  EXPECT_THROW(cf_train(unlabeled, &ck, f.vocab, ccfg, f.model, f.val), ContractError);
}

TEST(TrainConfig, JsonAndPresets) {
  const auto p = TrainConfig::mf_base_scale();
  EXPECT_DOUBLE_EQ(p.learning_rate, 4e-5);
  EXPECT_EQ(p.epochs, 10u);
  EXPECT_DOUBLE_EQ(TrainConfig::cf_base_scale().learning_rate, 2e-5);
  EXPECT_EQ(TrainConfig::cf_base_scale().epochs, 40u);
  const auto back = train_config_from_json(to_json(p), TrainConfig{});
  EXPECT_EQ(back.learning_rate, p.learning_rate);
  EXPECT_EQ(back.epochs, p.epochs);
  TrainConfig bad;
  bad.mask_ratio = 0.0;
  EXPECT_THROW(bad.validate(), ContractError);
}

}  // namespace
