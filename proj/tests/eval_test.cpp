#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "ptab/config.hpp"
#include "ptab/eval.hpp"
#include "ptab/synthetic.hpp"

namespace {

using namespace ptab;

double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

TEST(Auc, Trivial) {
  EXPECT_DOUBLE_EQ(auc({0.9, 0.1}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auc({0.1, 0.9}, {1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(auc({0.2, 0.4, 0.4, 0.8}, {0, 1, 0, 1}), 0.875);
  EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), UndefinedMetricError);
  EXPECT_THROW(auc({0.1, std::nan("")}, {1, 0}), ContractError);
  EXPECT_THROW(auc({0.1, 0.2}, {1, 2}), ContractError);
}

TEST(Auc, MatchesBruteForceWithTies) {
  Rng rng(42);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = uniform01(rng) < 0.3 ? 0.1 * static_cast<double>(uniform_index(rng, 4)) : uniform01(rng);
      y[i] = uniform01(rng) < 0.4 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(auc(s, y), brute_force_auc(s, y), 1e-12);
  }
}

TEST(Auc, MonotoneAndComplement) {
  Rng rng(1);
  std::vector<double> s(60), sq(60), flip(60);
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    s[i] = 0.01 + uniform01(rng);
    sq[i] = s[i] * s[i];
    flip[i] = 1.0 - s[i];
    y[i] = static_cast<int>(i % 3 == 0);
  }
  EXPECT_DOUBLE_EQ(auc(s, y), auc(sq, y));
  EXPECT_NEAR(auc(flip, y), 1.0 - auc(s, y), 1e-12);
}

MetricReport report_with(const std::string& name, std::vector<double> aucs) {
  MetricReport r;
  r.dataset = name;
  for (std::size_t i = 0; i < aucs.size(); ++i) {
    FoldResult f;
    f.fold = i;
    f.auc = aucs[i];
    r.folds.push_back(f);
  }
  r.finalize();
  return r;
}

TEST(Aggregate, OneAndTwoReports) {
  const auto one = aggregate({report_with("a", {0.8, 0.9, 0.7})});
  ASSERT_EQ(one.rows.size(), 2u);
  EXPECT_NEAR(one.rows[0].mean, 0.8, 1e-12);
  EXPECT_NEAR(one.rows[0].std, 0.1, 1e-12);
  EXPECT_NEAR(one.avg().mean, 0.8, 1e-12);

  const auto two = aggregate({report_with("a", {0.8, 0.8}), report_with("b", {0.9, 0.9})});
  EXPECT_NEAR(two.avg().mean, 0.85, 1e-12);
  EXPECT_THROW(aggregate({report_with("a", {0.8, 0.8}), report_with("b", {0.9})}), ContractError);
  EXPECT_THROW(aggregate({}), ContractError);
}

// Dataset means of the "Our" rows of the full-supervision and 50-label tables.
TEST(Aggregate, ReproducesPublishedAverageCells) {
  const std::vector<double> full = {0.939, 0.730, 0.926, 0.930, 0.859, 0.847, 0.783, 0.916};
  const std::vector<double> fifty = {0.769, 0.617, 0.828, 0.755, 0.722, 0.787, 0.749, 0.876};
  for (const auto& [means, cell] : {std::pair{full, "0.866±0.077"}, std::pair{fifty, "0.763±0.076"}}) {
    std::vector<MetricReport> reports;
    for (std::size_t i = 0; i < means.size(); ++i)
      reports.push_back(report_with("d" + std::to_string(i), std::vector<double>(5, means[i])));
    EXPECT_EQ(aggregate(reports).avg().cell(), cell);
  }
  EXPECT_EQ(format_mean_std(0.9391, 0.0049), "0.939±0.005");
}

TEST(Report, JsonAndCsv) {
  auto r = report_with("bm", {0.5, 0.75});
  r.protocol = "n=50";
  r.flags = {"-sep"};
  const auto j = to_json(r);
  EXPECT_EQ(j.at("aucs").size(), 2u);
  EXPECT_DOUBLE_EQ(j.at("mean").get<double>(), 0.625);
  EXPECT_TRUE(j.contains("std"));
  EXPECT_EQ(j.at("protocol"), "n=50");
  std::ostringstream out;
  write_report_csv(out, {r});
  EXPECT_EQ(out.str(),
            "dataset,fold,auc,mean,std,protocol,flags\n"
            "bm,0,0.500000,0.625000,0.176777,n=50,-sep\n"
            "bm,1,0.750000,0.625000,0.176777,n=50,-sep\n");
}

TableDataset small_synthetic(std::size_t rows = 500) {
  SyntheticSpec spec;
  spec.rows = rows;
  return make_synthetic(spec);
}

TEST(CrossValidate, ConstantScorerGivesHalf) {
  PipelineConfig cfg;
  const auto r = cross_validate(small_synthetic(), cfg, [](const FoldData& d, const PipelineConfig&) {
    return std::vector<double>(d.test.size(), 0.3);
  });
  ASSERT_EQ(r.folds.size(), 5u);
  for (const auto& f : r.folds) {
    EXPECT_DOUBLE_EQ(f.auc, 0.5);
    EXPECT_EQ(f.n_train + f.n_val + f.n_test, 500u);
  }
  EXPECT_DOUBLE_EQ(r.mean, 0.5);
  EXPECT_DOUBLE_EQ(r.std, 0.0);
  EXPECT_EQ(r.protocol, "full");
}

TEST(CrossValidate, VocabularyNeverSeesTestRows) {
  PipelineConfig cfg;
  std::vector<std::set<std::size_t>> test_rows(5);
  const auto r = cross_validate(small_synthetic(), cfg, [&](const FoldData& d, const PipelineConfig&) {
    for (const auto& s : d.test.sentences) test_rows[d.fold].insert(s.source_row);
    EXPECT_FALSE(d.mf.labels.has_value());
    return std::vector<double>(d.test.size(), 0.0);
  });
  for (const auto& f : r.folds) {
    ASSERT_FALSE(f.vocab_rows.empty());
    for (auto row : f.vocab_rows) EXPECT_EQ(test_rows[f.fold].count(row), 0u);
  }
}

TEST(SemiSupervised, LabeledSubsetAndProtocol) {
  PipelineConfig cfg;
  const auto ds = small_synthetic();
  const auto r = semi_supervised_eval(ds, 50, cfg, [](const FoldData& d, const PipelineConfig&) {
    EXPECT_EQ(d.labeled.size(), 50u);
    EXPECT_EQ(d.mf.size(), 325u);
    std::vector<double> s;
    for (const auto& x : d.test.sentences) s.push_back(static_cast<double>(x.source_row));
    return s;
  });
  EXPECT_EQ(r.protocol, "n=50");
  EXPECT_EQ(r.folds[0].n_labeled, 50u);
  EXPECT_THROW(semi_supervised_eval(ds, 400, cfg, {}), SizeError);
}

TEST(CrossValidate, ParallelFoldsMatchSerial) {
  PipelineConfig cfg;
  cfg.model.hidden = 16;
  cfg.model.ffn_dim = 32;
  cfg.model.max_len = 32;
  cfg.mf.epochs = 1;
  cfg.cf.epochs = 2;
  const auto ds = small_synthetic(250);
  const auto a = cross_validate(ds, cfg);
  cfg.jobs = 3;
  const auto b = cross_validate(ds, cfg);
  EXPECT_EQ(a.aucs(), b.aucs());
  EXPECT_EQ(a.mean, b.mean);
}

TEST(CrossValidate, SyntheticTaskIsLearned) {
  PipelineConfig cfg;
  cfg.model.max_len = 32;
  cfg.folds = 3;
  const auto r = cross_validate(small_synthetic(1200), cfg);
  EXPECT_GE(r.mean, 0.97);
  for (const auto& f : r.folds) EXPECT_GE(f.mf_epoch, 1u);
}

TEST(SemiSupervised, FullSizeDegeneratesToCrossValidate) {
  PipelineConfig cfg;
  cfg.model.hidden = 16;
  cfg.model.ffn_dim = 32;
  cfg.model.max_len = 32;
  cfg.mf.epochs = 1;
  cfg.cf.epochs = 2;
  const auto ds = small_synthetic(200);
  const auto full = cross_validate(ds, cfg);
  const auto semi = semi_supervised_eval(ds, full.folds[0].n_train, cfg);
  EXPECT_EQ(full.aucs(), semi.aucs());
}

TEST(Config, RoundTripAndPartialOverride) {
  PipelineConfig cfg;
  cfg.seed = 9;
  cfg.n_labeled = 200;
  cfg.textualize.use_sep = false;
  cfg.model.hidden = 32;
  cfg.cf.learning_rate = 1e-3;
  const auto back = pipeline_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));

  const auto partial = pipeline_config_from_json({{"mf", {{"epochs", 2}}}, {"seed", 4}});
  EXPECT_EQ(partial.mf.epochs, 2u);
  EXPECT_EQ(partial.mf.learning_rate, TrainConfig::mf_defaults().learning_rate);
  EXPECT_EQ(partial.seed, 4u);
  EXPECT_EQ(partial.model.max_len, 64u);
  EXPECT_FALSE(partial.n_labeled.has_value());
  EXPECT_THROW(pipeline_config_from_json({{"mf", {{"mask_ratio", 0.0}}}}), ContractError);
  EXPECT_THROW(pipeline_config_from_json({{"seed", "x"}}), SchemaError);
  EXPECT_THROW(load_pipeline_config("/nonexistent/cfg.json"), SchemaError);
}

}  // namespace
