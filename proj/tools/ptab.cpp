#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ptab/ptab.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log_event(const std::string& level, const std::string& event, json fields = json::object()) {
  fields["level"] = level;
  fields["event"] = event;
  std::cerr << fields.dump() << '\n';
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(ptab::fnv1a64(bytes));
}

/// Record of one invocation: written when the run starts, rewritten with
/// output digests and status when it ends.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv, const fs::path& primary_out)
      : path_(primary_out.string() + ".manifest.json"), t0_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["argv"] = std::move(argv);
    j_["toolkit_version"] = kVersion;
    j_["config_digest"] = "";
    j_["seeds"] = json::object();
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["status"] = "running";
    j_["wall_clock_seconds"] = 0.0;
  }

  void input(const fs::path& p) { j_["inputs"][p.string()] = file_digest(p); }
  void output(const fs::path& p) { j_["outputs"][p.string()] = ""; }
  void seed(const std::string& name, std::uint64_t v) { j_["seeds"][name] = v; }
  void config(const json& c) {
    j_["config"] = c;
    j_["config_digest"] = ptab::json_digest(c);
  }

  void begin() { write(); }

  void finish(const std::string& status) {
    for (auto& [p, d] : j_["outputs"].items()) d = file_digest(p);
    j_["status"] = status;
    j_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    write();
  }

 private:
  void write() const {
    std::ofstream out(path_);
    if (out) out << j_.dump(2) << '\n';
  }

  std::string path_;
  std::chrono::steady_clock::time_point t0_;
  json j_;
};

json textualize_json(const ptab::TextualizeOptions& o) {
  return {{"use_sep", o.use_sep},
          {"max_tokens", o.max_tokens},
          {"missing_value_text", o.missing_value_text}};
}

ptab::TextualizeOptions textualize_from_json(const json& j, ptab::TextualizeOptions base = {}) {
  base.use_sep = j.value("use_sep", base.use_sep);
  base.max_tokens = j.value("max_tokens", base.max_tokens);
  base.missing_value_text = j.value("missing_value_text", base.missing_value_text);
  return base;
}

/// Settings a checkpoint was trained with, so new rows are rendered the same way.
ptab::TextualizeOptions checkpoint_textualize(const ptab::Checkpoint& ck) {
  ptab::TextualizeOptions o;
  o.max_tokens = ck.config().max_len;
  if (ck.meta.extra.contains("textualize")) o = textualize_from_json(ck.meta.extra["textualize"], o);
  o.max_tokens = std::min(o.max_tokens, ck.config().max_len);
  return o;
}

ptab::EventSink json_sink() {
  return [](const ptab::TrainEvent& e) { log_event("info", "epoch", ptab::to_json(e)); };
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Root seed");
}

ptab::PipelineConfig resolve(const Common& c) {
  ptab::PipelineConfig cfg;
  if (!c.config.empty()) cfg = ptab::load_pipeline_config(c.config, cfg);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

/// Reads one row as a JSON object keyed by column name or an array in schema order.
std::vector<std::string> read_row(const fs::path& p, const ptab::Schema& schema) {
  std::ifstream in(p);
  if (!in) throw ptab::SchemaError("cannot open row file " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ptab::SchemaError("row file " + p.string() + ": " + e.what());
  }
  auto cell = [](const json& v) {
    if (v.is_null()) return std::string();
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  std::vector<std::string> row;
  if (j.is_array()) {
    if (j.size() != schema.size())
      throw ptab::SchemaError("row has " + std::to_string(j.size()) + " cells, schema has " +
                              std::to_string(schema.size()));
    for (const auto& v : j) row.push_back(cell(v));
  } else if (j.is_object()) {
    for (const auto& c : schema) row.push_back(j.contains(c.name) ? cell(j[c.name]) : std::string());
    for (const auto& [k, v] : j.items()) {
      bool known = false;
      for (const auto& c : schema) known = known || c.name == k;
      if (!known) throw ptab::SchemaError("row names unknown column '" + k + "'");
    }
  } else {
    throw ptab::SchemaError("row file must hold a JSON object or array");
  }
  return row;
}

/// Sentences [begin, end) of `c`, provenance recounted, labels dropped.
ptab::Corpus slice(const ptab::Corpus& c, std::size_t begin, std::size_t end) {
  ptab::Corpus out;
  for (std::size_t i = begin; i < end; ++i) {
    out.sentences.push_back(c.sentences[i]);
    ++out.provenance[c.sentences[i].source_dataset];
  }
  return out;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw ptab::FormatError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

template <typename F>
void write_text(const fs::path& p, F&& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ptab::FormatError("cannot write " + p.string());
  body(out);
}

// textualize ---------------------------------------------------------------

struct TextualizeArgs {
  std::string input, schema, output;
  bool no_sep = false;
  std::optional<std::size_t> max_tokens;
};

void cmd_textualize(const TextualizeArgs& a, RunManifest& m) {
  m.input(a.input);
  m.input(a.schema);
  m.output(a.output);
  m.output(a.output + ".json");
  ptab::TextualizeOptions o;
  o.use_sep = !a.no_sep;
  if (a.max_tokens) o.max_tokens = *a.max_tokens;
  m.config(textualize_json(o));
  m.begin();
  const auto spec = ptab::load_dataset_spec(a.schema);
  const auto ds = ptab::load_csv(a.input, spec);
  const auto corpus = ptab::textualize_dataset(ds, o);
  ptab::write_corpus(a.output, corpus);
  log_event("info", "textualized", {{"rows", corpus.size()}, {"output", a.output}});
}

// pretrain -----------------------------------------------------------------

struct PretrainArgs {
  Common common;
  std::vector<std::string> corpora;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

void cmd_pretrain(const PretrainArgs& a, RunManifest& m) {
  auto cfg = resolve(a.common);
  if (a.epochs) cfg.mf.epochs = *a.epochs;
  if (a.lr) cfg.mf.learning_rate = *a.lr;
  cfg.mf.seed = ptab::derive_seed(cfg.seed, "mf");
  for (const auto& c : a.corpora) {
    m.input(c);
    if (fs::exists(c + ".json")) m.input(c + ".json");
  }
  m.output(a.out);
  m.seed("root", cfg.seed);
  m.seed("mf", cfg.mf.seed);
  m.config(ptab::to_json(cfg));
  m.begin();

  std::vector<ptab::Corpus> corpora;
  for (const auto& c : a.corpora) corpora.push_back(ptab::read_corpus(c));
  const auto mixed = ptab::mix_corpora(corpora, ptab::derive_seed(cfg.seed, "mix"));
  if (mixed.size() < 2) throw ptab::SizeError("pretrain needs at least two sentences");
  const std::size_t n_val = std::max<std::size_t>(1, mixed.size() / 10);
  const auto train = slice(mixed, 0, mixed.size() - n_val);
  const auto val = slice(mixed, mixed.size() - n_val, mixed.size());
  log_event("info", "corpus", {{"sentences", mixed.size()},
                               {"provenance", mixed.provenance},
                               {"train", train.size()},
                               {"val", val.size()}});
  const auto vocab = ptab::build_vocab({train}, cfg.min_freq, cfg.max_vocab);
  auto res = ptab::mf_train(train, vocab, cfg.mf, cfg.model, val, nullptr, json_sink());
  res.meta.extra = {{"command", "pretrain"},
                    {"textualize", textualize_json(cfg.textualize)},
                    {"corpus_provenance", mixed.provenance}};
  ptab::save_checkpoint(a.out, res.params, res.meta);
  log_event("info", "checkpoint", {{"path", a.out},
                                   {"stage", "MF"},
                                   {"epoch", res.meta.epoch},
                                   {"val_loss", res.meta.metric},
                                   {"vocab_size", vocab.size()}});
}

// finetune -----------------------------------------------------------------

struct FinetuneArgs {
  Common common;
  std::string data, schema, init, out;
  bool skip_mf = false;
  bool no_sep = false;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

void cmd_finetune(const FinetuneArgs& a, RunManifest& m) {
  auto cfg = resolve(a.common);
  if (a.skip_mf) cfg.skip_mf = true;
  if (a.epochs) cfg.cf.epochs = *a.epochs;
  if (a.lr) cfg.cf.learning_rate = *a.lr;
  if (a.init.empty() && !cfg.skip_mf) throw UsageError("finetune needs --init or --skip-mf");
  cfg.cf.seed = ptab::derive_seed(cfg.seed, "cf");

  m.input(a.data);
  m.input(a.schema);
  if (!a.init.empty()) m.input(a.init);
  m.output(a.out);
  m.seed("root", cfg.seed);
  m.seed("cf", cfg.cf.seed);
  m.config(ptab::to_json(cfg));
  m.begin();

  std::optional<ptab::Checkpoint> init;
  auto topts = cfg.textualize;
  if (!a.init.empty()) {
    init = ptab::load_checkpoint(a.init);
    if (!init->meta.vocab) throw ptab::FormatError("checkpoint " + a.init + " carries no vocabulary");
    topts = checkpoint_textualize(*init);
  }
  if (a.no_sep) topts.use_sep = false;
  const auto& model = init ? init->config() : cfg.model;
  topts.max_tokens = std::min(topts.max_tokens, model.max_len);

  const auto spec = ptab::load_dataset_spec(a.schema);
  const auto ds = ptab::load_csv(a.data, spec);
  const auto corpus = ptab::textualize_dataset(ds, topts);
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::size_t n_val = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::lround(ptab::kValFraction * static_cast<double>(ds.size()))));
  const auto split = ptab::subsample_labeled(all, ds.labels, n_val, ptab::derive_seed(cfg.seed, "val"));
  const auto train = ptab::select_sentences(corpus, split.unlabeled_indices, true);
  const auto val = ptab::select_sentences(corpus, split.labeled_indices, true);
  const auto vocab = init ? *init->meta.vocab : ptab::build_vocab({train}, cfg.min_freq, cfg.max_vocab);

  auto res = ptab::cf_train(train, init ? &*init : nullptr, vocab, cfg.cf, cfg.model, val, json_sink());
  res.meta.extra = {{"command", "finetune"},
                    {"textualize", textualize_json(topts)},
                    {"init", a.init.empty() ? json(nullptr) : json(a.init)},
                    {"skip_mf", init ? false : true}};
  ptab::save_checkpoint(a.out, res.params, res.meta);
  log_event("info", "checkpoint", {{"path", a.out},
                                   {"stage", "CF"},
                                   {"epoch", res.meta.epoch},
                                   {"val_auc", res.meta.metric}});
}

// eval ---------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string data, schema, report, csv;
  std::optional<std::size_t> n_labeled, folds, jobs;
  bool no_sep = false, skip_mf = false;
};

void cmd_eval(const EvalArgs& a, RunManifest& m) {
  auto cfg = resolve(a.common);
  if (a.n_labeled) cfg.n_labeled = *a.n_labeled;
  if (a.folds) cfg.folds = *a.folds;
  if (a.jobs) cfg.jobs = *a.jobs;
  if (a.no_sep) cfg.textualize.use_sep = false;
  if (a.skip_mf) cfg.skip_mf = true;
  m.input(a.data);
  m.input(a.schema);
  m.output(a.report);
  if (!a.csv.empty()) m.output(a.csv);
  m.seed("root", cfg.seed);
  m.seed("folds", ptab::derive_seed(cfg.seed, "folds"));
  // jobs changes only scheduling, never results
  auto digest_cfg = ptab::to_json(cfg);
  digest_cfg.erase("jobs");
  m.config(digest_cfg);
  m.begin();

  const auto spec = ptab::load_dataset_spec(a.schema);
  const auto ds = ptab::load_csv(a.data, spec);
  log_event("info", "eval_start", {{"dataset", ds.name},
                                   {"rows", ds.size()},
                                   {"protocol", cfg.protocol()},
                                   {"folds", cfg.folds},
                                   {"jobs", cfg.jobs}});
  const auto report = cfg.n_labeled ? ptab::semi_supervised_eval(ds, *cfg.n_labeled, cfg)
                                    : ptab::cross_validate(ds, cfg);
  for (const auto& f : report.folds)
    log_event("info", "fold", {{"fold", f.fold}, {"auc", f.auc}, {"seconds", f.seconds}});
  auto j = ptab::to_json(report);
  j["config"] = digest_cfg;
  write_json(a.report, j);
  if (!a.csv.empty()) write_text(a.csv, [&](std::ostream& o) { ptab::write_report_csv(o, {report}); });
  log_event("info", "eval_done", {{"mean", report.mean},
                                  {"std", report.std},
                                  {"cell", ptab::format_mean_std(report.mean, report.std)}});
}

// attention / similarity ----------------------------------------------------

struct AttentionArgs {
  std::string ckpt, schema, row, out, svg;
  std::optional<std::size_t> layer, head;
  bool mean_layers = false;
};

void cmd_attention(const AttentionArgs& a, RunManifest& m) {
  m.input(a.ckpt);
  m.input(a.schema);
  m.input(a.row);
  m.output(a.out);
  if (!a.svg.empty()) m.output(a.svg);
  ptab::AttentionOptions opts;
  opts.layer = a.layer;
  opts.head = a.head;
  opts.mean_over_layers = a.mean_layers;
  m.config({{"layer", a.layer ? json(*a.layer) : json(nullptr)},
            {"head", a.head ? json(*a.head) : json(nullptr)},
            {"mean_over_layers", a.mean_layers}});
  m.begin();
  const auto ck = ptab::load_checkpoint(a.ckpt);
  const auto spec = ptab::load_dataset_spec(a.schema);
  const auto row = read_row(a.row, spec.schema);
  const auto sentence = ptab::textualize_row(row, spec.schema, checkpoint_textualize(ck));
  const auto r = ptab::cls_attention(ck, sentence, opts);
  auto j = ptab::to_json(r);
  j["sentence"] = sentence.rendered;
  write_json(a.out, j);
  if (!a.svg.empty()) write_text(a.svg, [&](std::ostream& o) { ptab::write_attention_svg(o, r); });
  log_event("info", "attention", {{"tokens", r.tokens.size()}, {"aggregation", r.aggregation}});
}

struct SimilarityArgs {
  std::string ckpt, schema, row, column, out, svg;
  std::vector<std::string> values;
};

void cmd_similarity(const SimilarityArgs& a, RunManifest& m) {
  m.input(a.ckpt);
  m.input(a.schema);
  m.input(a.row);
  m.output(a.out);
  if (!a.svg.empty()) m.output(a.svg);
  m.config({{"column", a.column}, {"values", a.values}});
  m.begin();
  const auto ck = ptab::load_checkpoint(a.ckpt);
  const auto spec = ptab::load_dataset_spec(a.schema);
  const auto row = read_row(a.row, spec.schema);
  const auto s = ptab::value_similarity(ck, spec.schema, row, a.column, a.values, checkpoint_textualize(ck));
  write_text(a.out, [&](std::ostream& o) { ptab::write_similarity_csv(o, s); });
  if (!a.svg.empty()) write_text(a.svg, [&](std::ostream& o) { ptab::write_similarity_svg(o, s); });
  log_event("info", "similarity", {{"values", s.values.size()}});
}

// synth --------------------------------------------------------------------

struct SynthArgs {
  ptab::SyntheticSpec spec;
  std::string out, schema_out;
};

void cmd_synth(const SynthArgs& a, RunManifest& m) {
  m.output(a.out);
  m.output(a.schema_out);
  m.seed("root", a.spec.seed);
  m.config({{"rows", a.spec.rows},
            {"columns", a.spec.columns},
            {"values_per_column", a.spec.values_per_column},
            {"noise", a.spec.noise},
            {"xor_rule", a.spec.xor_rule}});
  m.begin();
  const auto ds = ptab::make_synthetic(a.spec);
  write_text(a.out, [&](std::ostream& o) {
    std::vector<std::string> header;
    for (const auto& c : ds.schema) header.push_back(c.name);
    header.emplace_back("label");
    ptab::csv::write_row(o, header);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto row = ds.rows[i];
      row.push_back(ds.labels[i] ? "yes" : "no");
      ptab::csv::write_row(o, row);
    }
  });
  ptab::DatasetSpec spec{ds.name, ds.schema, "label", "yes", ds.domain_tag};
  write_json(a.schema_out, ptab::to_json(spec));
  log_event("info", "synth", {{"rows", ds.size()}, {"output", a.out}});
}

int exit_code_for(const ptab::Error& e) {
  if (dynamic_cast<const ptab::NumericError*>(&e) || dynamic_cast<const ptab::UndefinedMetricError*>(&e))
    return kNumeric;
  if (dynamic_cast<const ptab::ContractError*>(&e)) return kUsage;
  return kData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular classification through textualized rows and a transformer encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TextualizeArgs ta;
  auto* t = app.add_subcommand("textualize", "Render CSV rows as header:value sentences");
  t->add_option("--input", ta.input, "CSV file")->required();
  t->add_option("--schema", ta.schema, "Schema JSON")->required();
  t->add_option("--output", ta.output, "Corpus file")->required();
  t->add_flag("--no-sep", ta.no_sep, "Join fields with spaces instead of [SEP]");
  t->add_option("--max-tokens", ta.max_tokens, "Token budget per sentence");

  PretrainArgs pa;
  auto* p = app.add_subcommand("pretrain", "Masked-language training on one or more corpora");
  add_common(p, pa.common);
  p->add_option("--corpus", pa.corpora, "Corpus file (repeat to mix)")->required();
  p->add_option("--out", pa.out, "Checkpoint path")->required();
  p->add_option("--epochs", pa.epochs, "Override MF epochs");
  p->add_option("--lr", pa.lr, "Override MF learning rate");

  FinetuneArgs fa;
  auto* f = app.add_subcommand("finetune", "Classification training");
  add_common(f, fa.common);
  f->add_option("--data", fa.data, "CSV file")->required();
  f->add_option("--schema", fa.schema, "Schema JSON")->required();
  auto* init_opt = f->add_option("--init", fa.init, "MF checkpoint to start from");
  auto* skip_opt = f->add_flag("--skip-mf", fa.skip_mf, "Start from a random encoder");
  init_opt->excludes(skip_opt);
  f->add_flag("--no-sep", fa.no_sep, "Join fields with spaces instead of [SEP]");
  f->add_option("--out", fa.out, "Checkpoint path")->required();
  f->add_option("--epochs", fa.epochs, "Override CF epochs");
  f->add_option("--lr", fa.lr, "Override CF learning rate");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Cross-validated AUC of the full pipeline");
  add_common(e, ea.common);
  e->add_option("--data", ea.data, "CSV file")->required();
  e->add_option("--schema", ea.schema, "Schema JSON")->required();
  e->add_option("--n-labeled", ea.n_labeled, "Labeled rows per fold (semi-supervised)")
      ->check(CLI::IsMember({50, 200, 500}));
  e->add_option("--folds", ea.folds, "Number of folds")->check(CLI::Range(2, 100));
  e->add_option("--jobs", ea.jobs, "Folds run in parallel")->check(CLI::PositiveNumber);
  e->add_flag("--no-sep", ea.no_sep, "Join fields with spaces instead of [SEP]");
  e->add_flag("--skip-mf", ea.skip_mf, "Skip masked-language training");
  e->add_option("--report", ea.report, "Report JSON")->required();
  e->add_option("--csv", ea.csv, "Per-fold CSV");

  AttentionArgs aa;
  auto* at = app.add_subcommand("attention", "[CLS] attention over one row");
  at->add_option("--ckpt", aa.ckpt, "Checkpoint")->required();
  at->add_option("--schema", aa.schema, "Schema JSON")->required();
  at->add_option("--row", aa.row, "Row JSON")->required();
  at->add_option("--out", aa.out, "Report JSON")->required();
  at->add_option("--svg", aa.svg, "Heatmap SVG");
  at->add_option("--layer", aa.layer, "Layer index (default: last)");
  at->add_option("--head", aa.head, "Head index (default: mean)");
  at->add_flag("--mean-layers", aa.mean_layers, "Average over all layers");

  SimilarityArgs sa;
  auto* si = app.add_subcommand("similarity", "[CLS] distances across values of one column");
  si->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  si->add_option("--schema", sa.schema, "Schema JSON")->required();
  si->add_option("--row", sa.row, "Base row JSON")->required();
  si->add_option("--column", sa.column, "Column to vary")->required();
  si->add_option("--values", sa.values, "Comma-separated candidate values")->required()->delimiter(',');
  si->add_option("--out", sa.out, "Distance CSV")->required();
  si->add_option("--svg", sa.svg, "Heatmap SVG");

  SynthArgs ya;
  auto* sy = app.add_subcommand("synth", "Write the synthetic benchmark table");
  sy->add_option("--rows", ya.spec.rows, "Rows");
  sy->add_option("--columns", ya.spec.columns, "Columns");
  sy->add_option("--seed", ya.spec.seed, "Seed");
  sy->add_option("--noise", ya.spec.noise, "Context noise");
  sy->add_option("--out", ya.out, "CSV file")->required();
  sy->add_option("--schema-out", ya.schema_out, "Schema JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::vector<std::string> args(argv, argv + argc);
  fs::path primary;
  if (cmd == t) primary = ta.output;
  else if (cmd == p) primary = pa.out;
  else if (cmd == f) primary = fa.out;
  else if (cmd == e) primary = ea.report;
  else if (cmd == at) primary = aa.out;
  else if (cmd == si) primary = sa.out;
  else primary = ya.out;
  RunManifest manifest(cmd->get_name(), args, primary);

  int rc = kOk;
  try {
    if (cmd == t) cmd_textualize(ta, manifest);
    else if (cmd == p) cmd_pretrain(pa, manifest);
    else if (cmd == f) cmd_finetune(fa, manifest);
    else if (cmd == e) cmd_eval(ea, manifest);
    else if (cmd == at) cmd_attention(aa, manifest);
    else if (cmd == si) cmd_similarity(sa, manifest);
    else cmd_synth(ya, manifest);
  } catch (const UsageError& err) {
    log_event("error", "usage", {{"message", err.what()}});
    rc = kUsage;
  } catch (const ptab::Error& err) {
    log_event("error", "failed", {{"message", err.what()}});
    rc = exit_code_for(err);
  } catch (const std::exception& err) {
    log_event("error", "failed", {{"message", err.what()}});
    rc = kData;
  }
  manifest.finish(rc == kOk ? "ok" : "failed");
  return rc;
}
