#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/csv.hpp"
#include "ptab/error.hpp"
#include "ptab/metrics.hpp"
#include "ptab/table.hpp"
#include "ptab/textualizer.hpp"
#include "ptab/tokenizer.hpp"
#include "ptab/training.hpp"

namespace ptab {

/// Everything one run of the three-stage pipeline needs.
struct PipelineConfig {
  TextualizeOptions textualize;
  nn::ModelConfig model;
  TrainConfig mf = TrainConfig::mf_defaults();
  TrainConfig cf = TrainConfig::cf_defaults();
  bool skip_mf = false;
  std::size_t min_freq = 1;
  std::size_t max_vocab = 30000;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  std::optional<std::size_t> n_labeled;
  std::size_t jobs = 1;

  PipelineConfig() {
    textualize.max_tokens = 64;
    model.max_len = 64;
  }

  /// Flags naming the ablations in effect ("-sep", "-mlm").
  std::vector<std::string> flags() const {
    std::vector<std::string> f;
    if (!textualize.use_sep) f.push_back("-sep");
    if (skip_mf) f.push_back("-mlm");
    return f;
  }

  std::string protocol() const {
    return n_labeled ? "n=" + std::to_string(*n_labeled) : std::string("full");
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"textualize",
           {{"use_sep", c.textualize.use_sep},
            {"max_tokens", c.textualize.max_tokens},
            {"missing_value_text", c.textualize.missing_value_text}}},
          {"model", nn::to_json(c.model)},
          {"mf", to_json(c.mf)},
          {"cf", to_json(c.cf)},
          {"skip_mf", c.skip_mf},
          {"vocab", {{"min_freq", c.min_freq}, {"max_size", c.max_vocab}}},
          {"seed", c.seed},
          {"folds", c.folds},
          {"n_labeled", c.n_labeled ? nlohmann::json(*c.n_labeled) : nlohmann::json(nullptr)},
          {"jobs", c.jobs}};
}

/// Inputs handed to a fold scorer. Corpora carry labels; `mf` does not.
struct FoldData {
  std::size_t fold = 0;
  std::uint64_t seed = 0;  // fold-specific
  Corpus mf;               // all training rows, labels stripped
  Corpus labeled;          // CF training rows
  Corpus val;
  Corpus test;
  Vocabulary vocab;  // built from `mf` only
};

/// Returns one score per test sentence.
using FoldScorer = std::function<std::vector<double>(const FoldData&, const PipelineConfig&)>;

struct FoldResult {
  std::size_t fold = 0;
  double auc = 0.0;
  std::size_t n_train = 0;
  std::size_t n_labeled = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::size_t vocab_size = 0;
  std::size_t mf_epoch = 0;
  std::size_t cf_epoch = 0;
  double seconds = 0.0;
  std::vector<std::size_t> vocab_rows;  // source rows that fed the vocabulary
};

struct MetricReport {
  std::string dataset;
  std::string protocol = "full";
  std::vector<std::string> flags;
  std::vector<FoldResult> folds;
  double mean = 0.0;
  double std = 0.0;

  std::vector<double> aucs() const {
    std::vector<double> a;
    for (const auto& f : folds) a.push_back(f.auc);
    return a;
  }

  void finalize() {
    const auto a = aucs();
    mean = ptab::mean(a);
    std = a.size() > 1 ? sample_std(a) : 0.0;
  }
};

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},           {"auc", f.auc},
                     {"n_train", f.n_train},     {"n_labeled", f.n_labeled},
                     {"n_val", f.n_val},         {"n_test", f.n_test},
                     {"vocab_size", f.vocab_size}, {"mf_epoch", f.mf_epoch},
                     {"cf_epoch", f.cf_epoch},   {"seconds", f.seconds}});
  return {{"dataset", r.dataset}, {"protocol", r.protocol}, {"flags", r.flags},
          {"aucs", r.aucs()},     {"mean", r.mean},         {"std", r.std},
          {"folds", folds}};
}

/// Fixed three-decimal "mean±std".
inline std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", mean, std);
  return buf;
}

inline std::string join_flags(const std::vector<std::string>& flags) {
  std::string s;
  for (const auto& f : flags) s += (s.empty() ? "" : " ") + f;
  return s;
}

/// Rows: dataset, fold, auc, mean, std, protocol, flags.
inline void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  csv::write_row(out, {"dataset", "fold", "auc", "mean", "std", "protocol", "flags"});
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : reports)
    for (const auto& f : r.folds)
      csv::write_row(out, {r.dataset, std::to_string(f.fold), num(f.auc), num(r.mean), num(r.std),
                           r.protocol, join_flags(r.flags)});
}

struct ComparisonRow {
  std::string dataset;
  double mean = 0.0;
  double std = 0.0;
  std::string cell() const { return format_mean_std(mean, std); }
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // one per report, then "AVG"
  const ComparisonRow& avg() const { return rows.back(); }
};

/// Per-dataset mean±std plus an AVG row: the unweighted mean of the dataset
/// means and the sample standard deviation across them.
inline ComparisonTable aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate: no reports");
  ComparisonTable t;
  std::vector<double> means;
  for (const auto& r : reports) {
    if (r.folds.size() != reports.front().folds.size())
      throw ContractError("aggregate: reports disagree on the number of folds");
    t.rows.push_back({r.dataset, r.mean, r.std});
    means.push_back(r.mean);
  }
  t.rows.push_back({"AVG", mean(means), means.size() > 1 ? sample_std(means) : reports.front().std});
  return t;
}

inline void write_table_csv(std::ostream& out, const ComparisonTable& t) {
  csv::write_row(out, {"dataset", "mean", "std", "cell"});
  for (const auto& r : t.rows) {
    char m[32], s[32];
    std::snprintf(m, sizeof m, "%.3f", r.mean);
    std::snprintf(s, sizeof s, "%.3f", r.std);
    csv::write_row(out, {r.dataset, m, s, r.cell()});
  }
}

namespace detail {

inline std::vector<std::size_t> source_rows(const Corpus& c) {
  std::vector<std::size_t> rows;
  for (const auto& s : c.sentences) rows.push_back(s.source_row);
  return rows;
}

inline TrainConfig with_seed(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

}  // namespace detail

/// MF on the fold's training sentences (unless skipped), CF on the labeled
/// subset, then positive-class scores for the test split.
inline std::vector<double> pipeline_scorer(const FoldData& d, const PipelineConfig& cfg,
                                           FoldResult* info = nullptr) {
  const auto mf_cfg = detail::with_seed(cfg.mf, derive_seed(d.seed, "mf"));
  const auto cf_cfg = detail::with_seed(cfg.cf, derive_seed(d.seed, "cf"));
  std::optional<Checkpoint> init;
  if (!cfg.skip_mf) {
    auto mf = mf_train(d.mf, d.vocab, mf_cfg, cfg.model, d.val);
    if (info) info->mf_epoch = mf.meta.epoch;
    init = Checkpoint{std::move(mf.params), std::move(mf.meta)};
  }
  auto cf = cf_train(d.labeled, init ? &*init : nullptr, d.vocab, cf_cfg, cfg.model, d.val);
  if (info) info->cf_epoch = cf.meta.epoch;
  return score_sequences(cf.params, encode_corpus(d.test, d.vocab, cf.params.config.max_len));
}

/// Assembles the inputs of one fold. The vocabulary sees training rows only.
inline FoldData make_fold_data(const TableDataset& ds, const Corpus& corpus, const Fold& fold,
                               std::size_t fold_index, const PipelineConfig& cfg) {
  FoldData d;
  d.fold = fold_index;
  d.seed = derive_seed(cfg.seed, "fold", fold_index);
  d.mf = select_sentences(corpus, fold.train, false);
  if (cfg.n_labeled) {
    const auto sub = subsample_labeled(fold.train, ds.labels, *cfg.n_labeled,
                                       derive_seed(d.seed, "subsample"));
    d.labeled = select_sentences(corpus, sub.labeled_indices, true);
  } else {
    d.labeled = select_sentences(corpus, fold.train, true);
  }
  d.val = select_sentences(corpus, fold.val, true);
  d.test = select_sentences(corpus, fold.test, true);
  d.vocab = build_vocab({d.mf}, cfg.min_freq, cfg.max_vocab);
  return d;
}

/// k-fold evaluation. `scorer` defaults to the full pipeline; folds run on up
/// to cfg.jobs threads and are reported in fold order.
inline MetricReport cross_validate(const TableDataset& ds, const PipelineConfig& cfg,
                                   const FoldScorer& scorer = {}) {
  ds.validate();
  auto tcfg = cfg.textualize;
  tcfg.max_tokens = std::min(tcfg.max_tokens, cfg.model.max_len);
  const auto corpus = textualize_dataset(ds, tcfg);
  const auto plan = make_folds(ds.labels, cfg.folds, derive_seed(cfg.seed, "folds"));

  MetricReport report;
  report.dataset = ds.name;
  report.protocol = cfg.protocol();
  report.flags = cfg.flags();
  report.folds.resize(plan.folds.size());

  auto run = [&](std::size_t f) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = make_fold_data(ds, corpus, plan.folds[f], f, cfg);
    FoldResult& r = report.folds[f];
    r.fold = f;
    r.n_train = data.mf.size();
    r.n_labeled = data.labeled.size();
    r.n_val = data.val.size();
    r.n_test = data.test.size();
    r.vocab_size = data.vocab.size();
    r.vocab_rows = detail::source_rows(data.mf);
    const auto scores = scorer ? scorer(data, cfg) : pipeline_scorer(data, cfg, &r);
    if (scores.size() != data.test.size())
      throw ContractError("scorer returned " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(data.test.size()) + " test rows");
    r.auc = auc(scores, *data.test.labels);
    r.seconds = detail::seconds_since(t0);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, plan.folds.size()));
  if (jobs == 1) {
    for (std::size_t f = 0; f < plan.folds.size(); ++f) run(f);
  } else {
    std::vector<std::exception_ptr> errors(plan.folds.size());
    std::mutex next_mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t f;
          {
            std::lock_guard<std::mutex> lock(next_mu);
            if (next >= plan.folds.size()) return;
            f = next++;
          }
          try {
            run(f);
          } catch (...) {
            errors[f] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  report.finalize();
  return report;
}

/// Semi-supervised protocol: MF on every training row with labels stripped,
/// CF on a stratified subset of n_labeled rows.
inline MetricReport semi_supervised_eval(const TableDataset& ds, std::size_t n_labeled,
                                         PipelineConfig cfg, const FoldScorer& scorer = {}) {
  if (n_labeled == 0) throw SizeError("n_labeled must be positive");
  cfg.n_labeled = n_labeled;
  return cross_validate(ds, cfg, scorer);
}

}  // namespace ptab
