#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ptab/encoder.hpp"
#include "ptab/gradcheck.hpp"

namespace {

using namespace ptab;
using nn::Mat;

nn::ModelConfig grad_config() {
  nn::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.hidden = 16;
  c.ffn_dim = 32;
  c.vocab_size = 50;
  c.max_len = 12;
  c.dropout = 0.0;
  return c;
}

TokenSequence make_seq(std::vector<TokenId> real, std::size_t max_len) {
  TokenSequence s;
  s.n_real = real.size();
  s.ids = std::move(real);
  s.ids.resize(max_len, kPad);
  s.pad_mask.assign(max_len, 0);
  std::fill(s.pad_mask.begin(), s.pad_mask.begin() + static_cast<std::ptrdiff_t>(s.n_real), 1);
  return s;
}

// Randomizes everything (including the zero-initialized MLM head and the
// unit layer-norm gains) so no gradient is trivially zero.
nn::Parameters<double> random_params(std::uint64_t seed) {
  auto p = nn::init_params<double>(grad_config(), seed);
  Rng rng(seed + 100);
  nn::for_each_tensor(p, [&](const std::string& name, Mat<double>& t) {
    const double sd = name.find("embedding") != std::string::npos ? 0.5 : 0.3;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += sd * standard_normal(rng);
  });
  return p;
}

TEST(GradientCheck, MlmAllTensors) {
  const auto c = grad_config();
  const auto p = random_params(1);
  const auto seq = make_seq({kCls, 10, kMask, 12, kSep, 20, kMask, 22, 23}, c.max_len);
  const nn::MaskPlan plan{{2, 6}, {11, 21}};
  const auto g = nn::backward_mlm(p, seq, plan);
  EXPECT_TRUE(g.cls_weight.isZero(0));
  EXPECT_TRUE(g.cls_bias.isZero(0));
  const auto errs = gradient_check(p, g, [&](const nn::Parameters<double>& q) {
    return nn::loss_mlm(nn::forward(q, seq, nn::Mode::mlm), plan);
  });
  for (const auto& e : errs) {
    if (e.name.starts_with("cls_")) continue;
    // bk: softmax ignores a per-query shift, so its gradient is zero
    if (!e.name.ends_with(".bk")) {
      EXPECT_GT(e.scale, kZeroGradient) << e.name;
    }
    EXPECT_LT(e.error, 1e-4) << e.name;
  }
}

TEST(GradientCheck, ClsAllTensors) {
  const auto c = grad_config();
  const auto p = random_params(2);
  const auto seq = make_seq({kCls, 30, 31, kSep, 32, 33, 34}, c.max_len);
  const auto g = nn::backward_cls(p, seq, 1);
  EXPECT_TRUE(g.mlm_weight.isZero(0));
  const auto errs = gradient_check(p, g, [&](const nn::Parameters<double>& q) {
    return nn::loss_cls(nn::forward(q, seq, nn::Mode::cls), 1);
  });
  for (const auto& e : errs) {
    if (e.name.starts_with("mlm_")) continue;
    if (!e.name.ends_with(".bk")) {
      EXPECT_GT(e.scale, kZeroGradient) << e.name;
    }
    EXPECT_LT(e.error, 1e-4) << e.name;
  }
}

TEST(GradientCheck, AccumulationIsLinearInScale) {
  const auto c = grad_config();
  const auto p = random_params(3);
  const auto seq = make_seq({kCls, 10, 11, 12}, c.max_len);
  auto once = nn::zeros_like(p);
  nn::cls_step<double>(p, seq, 0, &once, 2.0);
  auto twice = nn::zeros_like(p);
  nn::cls_step<double>(p, seq, 0, &twice);
  nn::cls_step<double>(p, seq, 0, &twice);
  std::vector<const Mat<double>*> a;
  nn::for_each_tensor(once, [&](const std::string&, const Mat<double>& t) { a.push_back(&t); });
  std::size_t i = 0;
  nn::for_each_tensor(twice, [&](const std::string& name, const Mat<double>& t) {
    EXPECT_LT((t - *a[i++]).cwiseAbs().maxCoeff(), 1e-12) << name;
  });
}

}  // namespace
