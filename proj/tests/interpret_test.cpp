#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "ptab/interpret.hpp"
#include "ptab/synthetic.hpp"
#include "ptab/training.hpp"

namespace {

using namespace ptab;

// A calendar-like table whose "month" column takes the values 1..12.
struct MonthTable {
  Schema schema = {{"month", ColumnKind::numeric, "Month"},
                   {"job", ColumnKind::categorical, "Job"},
                   {"balance", ColumnKind::numeric, "Balance"}};
  std::vector<std::string> base = {"5", "driver", "1200"};
  std::vector<std::string> months() const {
    std::vector<std::string> m;
    for (int i = 1; i <= 12; ++i) m.push_back(std::to_string(i));
    return m;
  }
};

Checkpoint random_checkpoint(const Vocabulary& vocab, std::uint64_t seed = 3) {
  nn::ModelConfig c;
  c.hidden = 32;
  c.ffn_dim = 64;
  c.n_heads = 4;
  c.max_len = 32;
  c.vocab_size = vocab.size();
  Checkpoint ck;
  ck.params = nn::init_params<float>(c, seed);
  // larger weights so attention is far from uniform
  Rng rng(seed);
  nn::for_each_tensor(ck.params, [&](const std::string& name, nn::Mat<float>& t) {
    if (name.find(".wq") != std::string::npos || name.find(".wk") != std::string::npos)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(0.5 * standard_normal(rng));
  });
  ck.meta.vocab = vocab;
  return ck;
}

Checkpoint month_checkpoint() {
  const MonthTable t;
  Corpus c;
  for (const auto& m : t.months()) {
    auto row = t.base;
    row[0] = m;
    c.sentences.push_back(textualize_row(row, t.schema));
  }
  return random_checkpoint(build_vocab({c}));
}

TEST(ClsAttention, RowsAreStochasticAndFieldsPartition) {
  const MonthTable t;
  const auto ck = month_checkpoint();
  const auto s = textualize_row(t.base, t.schema);
  const auto r = cls_attention(ck, s);
  EXPECT_EQ(r.aggregation, "layer=1,head=mean");
  ASSERT_EQ(r.head_rows.size(), 4u);
  for (const auto& row : r.head_rows)
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
  const double total = std::accumulate(r.per_token_scores.begin(), r.per_token_scores.end(), 0.0);
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_LE(total - r.cls_self, 1.0 + 1e-6);
  double fields = 0.0;
  for (const auto& f : r.per_field_scores) fields += f.score;
  EXPECT_NEAR(fields + r.special_mass, total, 1e-12);
  ASSERT_EQ(r.per_field_scores.size(), 3u);
  EXPECT_EQ(r.per_field_scores[1].field, "Job");
  // [CLS] month : 5 [SEP] job : driver [SEP] balance : 1 2 0 0
  EXPECT_EQ(r.tokens.size(), encode(s, *ck.meta.vocab, 32).n_real);
  EXPECT_EQ(r.tokens.front(), "[CLS]");
  for (double x : r.per_token_scores) EXPECT_GE(x, 0.0);
}

TEST(ClsAttention, SingleFieldGetsAllNonSelfMass) {
  const auto ck = month_checkpoint();
  const auto s = textualize_row({"driver"}, {{"job", ColumnKind::categorical, "Job"}});
  const auto r = cls_attention(ck, s);
  ASSERT_EQ(r.per_field_scores.size(), 1u);
  EXPECT_NEAR(r.per_field_scores[0].score, 1.0 - r.cls_self, 1e-6);
}

TEST(ClsAttention, AggregationOptions) {
  const MonthTable t;
  const auto ck = month_checkpoint();
  const auto s = textualize_row(t.base, t.schema);
  AttentionOptions one;
  one.layer = 0;
  one.head = 2;
  const auto r = cls_attention(ck, s, one);
  EXPECT_EQ(r.aggregation, "layer=0,head=2");
  ASSERT_EQ(r.head_rows.size(), 1u);
  EXPECT_EQ(r.head_rows[0], r.per_token_scores);
  AttentionOptions all;
  all.mean_over_layers = true;
  EXPECT_EQ(cls_attention(ck, s, all).head_rows.size(), 8u);
  one.layer = 5;
  EXPECT_THROW(cls_attention(ck, s, one), RangeError);
  Checkpoint bare = ck;
  bare.meta.vocab.reset();
  EXPECT_THROW(cls_attention(bare, s), ContractError);
}

TEST(ClsAttention, ChangesAfterClassificationTraining) {
  SyntheticSpec spec;
  spec.rows = 300;
  const auto ds = make_synthetic(spec);
  const auto c = textualize_dataset(ds);
  const auto plan = make_folds(ds.labels, 5, 0);
  const auto train = select_sentences(c, plan.folds[0].train, true);
  const auto val = select_sentences(c, plan.folds[0].val, true);
  const auto vocab = build_vocab({train});
  nn::ModelConfig mc;
  mc.hidden = 32;
  mc.ffn_dim = 64;
  mc.max_len = 32;
  auto mcfg = TrainConfig::mf_defaults();
  mcfg.epochs = 1;
  const auto mf = mf_train(train, vocab, mcfg, mc, val);
  const Checkpoint before{mf.params, mf.meta};
  auto ccfg = TrainConfig::cf_defaults();
  ccfg.epochs = 2;
  const auto cf = cf_train(train, &before, vocab, ccfg, mc, val);
  const Checkpoint after{cf.params, cf.meta};
  const auto a = cls_attention(before, c.sentences[0]);
  const auto b = cls_attention(after, c.sentences[0]);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.per_token_scores.size(); ++i)
    diff = std::max(diff, std::abs(a.per_token_scores[i] - b.per_token_scores[i]));
  EXPECT_GT(diff, 0.0);
}

TEST(ValueSimilarity, MetricOverTwelveMonths) {
  const MonthTable t;
  const auto ck = month_checkpoint();
  const auto m = value_similarity(ck, t.schema, t.base, "month", t.months());
  ASSERT_EQ(m.distances.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(m.distances[i][i], 0.0);
    for (std::size_t j = 0; j < 12; ++j) {
      EXPECT_EQ(m.distances[i][j], m.distances[j][i]);
      if (i != j) {
        EXPECT_GT(m.distances[i][j], 0.0);
      }
      for (std::size_t k = 0; k < 12; ++k)
        EXPECT_LE(m.distances[i][k], m.distances[i][j] + m.distances[j][k] + 1e-9);
    }
  }
}

TEST(ValueSimilarity, IdenticalSentencesAreAtZero) {
  const MonthTable t;
  const auto ck = month_checkpoint();
  const auto m = value_similarity(ck, t.schema, t.base, "month", {"3", "7", "3"});
  EXPECT_EQ(m.distances[0][2], 0.0);
  EXPECT_THROW(value_similarity(ck, t.schema, t.base, "day", {"1", "2"}), SchemaError);
  EXPECT_THROW(value_similarity(ck, t.schema, t.base, "month", {"1"}), ContractError);
}

TEST(Outputs, CsvAndSvg) {
  const MonthTable t;
  const auto ck = month_checkpoint();
  const auto m = value_similarity(ck, t.schema, t.base, "month", {"1", "2", "<3>"});
  std::ostringstream csv_out;
  write_similarity_csv(csv_out, m);
  std::istringstream in(csv_out.str());
  csv::Reader reader(in);
  std::size_t rows = 0;
  while (auto rec = reader.next()) {
    EXPECT_EQ(rec->cells.size(), 4u);
    ++rows;
  }
  EXPECT_EQ(rows, 4u);

  std::ostringstream svg;
  write_similarity_svg(svg, m);
  const auto text = svg.str();
  EXPECT_EQ(text.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0), 0u);
  EXPECT_NE(text.find("&lt;3&gt;"), std::string::npos);
  EXPECT_EQ(text.substr(text.size() - 7), "</svg>\n");

  const auto r = cls_attention(ck, textualize_row(t.base, t.schema));
  std::ostringstream asvg;
  write_attention_svg(asvg, r);
  std::size_t rects = 0;
  for (auto at = asvg.str().find("<rect"); at != std::string::npos; at = asvg.str().find("<rect", at + 1)) ++rects;
  EXPECT_EQ(rects, r.tokens.size());
  const auto j = to_json(r);
  EXPECT_EQ(j.at("tokens").size(), r.tokens.size());
  EXPECT_EQ(j.at("per_field_scores").size(), 3u);
}

}  // namespace
