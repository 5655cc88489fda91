#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/error.hpp"
#include "ptab/pretokenize.hpp"
#include "ptab/rng.hpp"
#include "ptab/table.hpp"

namespace ptab {

inline constexpr std::string_view kColumnSeparator = ":";

struct TextualizeOptions {
  bool use_sep = true;
  std::size_t max_tokens = 512;
  std::string missing_value_text = "unknown";

  void validate() const {
    if (max_tokens < 8) throw ContractError("max_tokens must be >= 8");
  }
};

struct Phrase {
  std::string header;
  std::string value;
  std::string rendered;  // header + ":" + value
};

struct Sentence {
  std::vector<Phrase> phrases;
  std::string rendered;
  std::size_t source_row = 0;
  std::string source_dataset;
  bool use_sep = true;
};

struct Corpus {
  std::vector<Sentence> sentences;
  std::optional<std::vector<int>> labels;
  std::map<std::string, std::size_t> provenance;

  std::size_t size() const { return sentences.size(); }
};

namespace detail {
/// Line breaks become spaces and a literal "[SEP]" is lowercased, so cell text
/// can neither split a sentence across lines nor fake a field boundary.
inline std::string sanitize_cell(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\n' || c == '\r' || c == '\t') c = ' ';
  for (auto at = out.find(kSepLiteral); at != std::string::npos;
       at = out.find(kSepLiteral, at + 1))
    out.replace(at, kSepLiteral.size(), "[sep]");
  return out;
}

inline std::string truncate_tokens(const std::string& text,
                                   const std::vector<Piece>& pieces,
                                   std::size_t keep) {
  if (keep >= pieces.size()) return text;
  if (keep == 0) return {};
  return text.substr(0, pieces[keep - 1].end);
}
}  // namespace detail

inline Phrase build_phrase(std::string_view header, std::string_view value,
                           const TextualizeOptions& opts = {}) {
  if (header.empty()) throw SchemaError("build_phrase: empty header");
  Phrase p;
  p.header = detail::sanitize_cell(header);
  p.value = value.empty() ? opts.missing_value_text
                          : detail::sanitize_cell(value);
  p.rendered = p.header + std::string(kColumnSeparator) + p.value;
  return p;
}

/// Truncates trailing tokens of header and value so that
/// tokens(header) + 1 + tokens(value) <= token_budget, keeping at least one
/// header token.
inline std::pair<std::string, std::string> simplify_field(
    const std::string& header, const std::string& value,
    std::size_t token_budget) {
  if (token_budget < 2) throw ContractError("simplify_field: budget must be >= 2");
  const auto hp = pretokenize(header);
  const auto vp = pretokenize(value);
  if (hp.size() + 1 + vp.size() <= token_budget) return {header, value};
  const std::size_t h_keep = std::min(hp.size(), token_budget - 1);
  const std::size_t v_keep = std::min(vp.size(), token_budget - 1 - h_keep);
  return {detail::truncate_tokens(header, hp, h_keep),
          detail::truncate_tokens(value, vp, v_keep)};
}

/// floor((max_tokens - 2 - (D - 1)) / D), never below 2.
inline std::size_t field_token_budget(std::size_t max_tokens, std::size_t width) {
  if (width == 0) return max_tokens;
  const std::ptrdiff_t avail = static_cast<std::ptrdiff_t>(max_tokens) - 2 -
                               static_cast<std::ptrdiff_t>(width - 1);
  const auto b = avail > 0 ? static_cast<std::size_t>(avail) / width : 0;
  return std::max<std::size_t>(b, 2);
}

inline std::string join_phrases(const std::vector<Phrase>& phrases, bool use_sep) {
  std::string out;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i) out += use_sep ? std::string(kSepLiteral) : std::string(" ");
    out += phrases[i].rendered;
  }
  return out;
}

inline Sentence textualize_row(const std::vector<std::string>& row,
                               const Schema& schema,
                               const TextualizeOptions& opts = {},
                               std::size_t source_row = 0,
                               std::string_view source_dataset = {}) {
  opts.validate();
  if (row.size() != schema.size())
    throw RowError("row " + std::to_string(source_row) + " has " +
                       std::to_string(row.size()) + " cells, schema has " +
                       std::to_string(schema.size()),
                   0);
  const auto budget = field_token_budget(opts.max_tokens, schema.size());
  Sentence s;
  s.source_row = source_row;
  s.source_dataset = std::string(source_dataset);
  s.use_sep = opts.use_sep;
  s.phrases.reserve(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    const auto full = build_phrase(schema[i].header_text, row[i], opts);
    auto [h, v] = simplify_field(full.header, full.value, budget);
    Phrase p;
    p.header = std::move(h);
    p.value = std::move(v);
    p.rendered = p.header + std::string(kColumnSeparator) + p.value;
    s.phrases.push_back(std::move(p));
  }
  s.rendered = join_phrases(s.phrases, opts.use_sep);
  return s;
}

inline Corpus textualize_dataset(const TableDataset& ds,
                                 const TextualizeOptions& opts = {}) {
  opts.validate();
  Corpus c;
  c.sentences.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    c.sentences.push_back(textualize_row(ds.rows[i], ds.schema, opts, i, ds.name));
  c.labels = ds.labels;
  if (ds.size()) c.provenance[ds.name] = ds.size();
  return c;
}

/// Sub-corpus of the given sentence indices (labels follow when present).
inline Corpus select_sentences(const Corpus& c, const std::vector<std::size_t>& idx,
                               bool keep_labels = true) {
  Corpus out;
  out.sentences.reserve(idx.size());
  std::vector<int> labels;
  for (auto i : idx) {
    out.sentences.push_back(c.sentences.at(i));
    if (c.labels) labels.push_back(c.labels->at(i));
    ++out.provenance[c.sentences[i].source_dataset];
  }
  if (keep_labels && c.labels) out.labels = std::move(labels);
  return out;
}

/// Union of the corpora in a seeded random order. Inputs are first put in a
/// canonical order (by provenance) so the result does not depend on argument
/// order. Labels are dropped: the mixture only feeds masked-language training.
inline Corpus mix_corpora(const std::vector<Corpus>& corpora, std::uint64_t seed) {
  if (corpora.empty()) throw ContractError("mix_corpora: no corpora given");
  std::vector<const Corpus*> order;
  for (const auto& c : corpora) order.push_back(&c);
  auto key = [](const Corpus* c) {
    std::string k;
    for (const auto& [name, n] : c->provenance) k += name + '\x1f' + std::to_string(n) + '\x1e';
    return k;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](const Corpus* a, const Corpus* b) { return key(a) < key(b); });
  Corpus mixed;
  for (const Corpus* c : order) {
    mixed.sentences.insert(mixed.sentences.end(), c->sentences.begin(),
                           c->sentences.end());
    for (const auto& [name, n] : c->provenance) mixed.provenance[name] += n;
  }
  Rng rng = make_stream(seed, "mix");
  shuffle(mixed.sentences.begin(), mixed.sentences.end(), rng);
  return mixed;
}

/// Rebuilds a Sentence from its rendered form. With "[SEP]" present the
/// phrases are exact; without it, each whitespace chunk containing ":" opens a
/// new phrase. Either way the token stream equals that of the original.
inline Sentence parse_sentence(std::string_view line,
                               std::string_view source_dataset = {},
                               std::size_t source_row = 0) {
  Sentence s;
  s.rendered = std::string(line);
  s.source_dataset = std::string(source_dataset);
  s.source_row = source_row;
  auto add_phrase = [&](std::string_view text) {
    Phrase p;
    p.rendered = std::string(text);
    const auto colon = text.find(kColumnSeparator);
    if (colon == std::string_view::npos) {
      p.value = std::string(text);
    } else {
      p.header = std::string(text.substr(0, colon));
      p.value = std::string(text.substr(colon + 1));
    }
    s.phrases.push_back(std::move(p));
  };
  if (line.empty()) return s;
  if (line.find(kSepLiteral) != std::string_view::npos) {
    s.use_sep = true;
    std::size_t start = 0;
    while (true) {
      const auto at = line.find(kSepLiteral, start);
      add_phrase(line.substr(start, at == std::string_view::npos ? line.npos : at - start));
      if (at == std::string_view::npos) break;
      start = at + kSepLiteral.size();
    }
    return s;
  }
  s.use_sep = false;
  std::size_t phrase_start = 0;
  std::size_t i = 0;
  bool first = true;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t chunk = i;
    while (i < line.size() && line[i] != ' ') ++i;
    const auto word = line.substr(chunk, i - chunk);
    if (word.find(kColumnSeparator) != std::string_view::npos && !first) {
      auto prev = line.substr(phrase_start, chunk - phrase_start);
      while (!prev.empty() && prev.back() == ' ') prev.remove_suffix(1);
      add_phrase(prev);
      phrase_start = chunk;
    }
    if (!word.empty()) first = false;
  }
  add_phrase(line.substr(phrase_start));
  return s;
}

/// One rendered sentence per line, plus `<path>.json` with labels and
/// provenance when `with_sidecar` is set.
inline void write_corpus(const std::filesystem::path& path, const Corpus& c,
                         bool with_sidecar = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write corpus file " + path.string());
  for (const auto& s : c.sentences) out << s.rendered << '\n';
  if (!with_sidecar) return;
  nlohmann::json side;
  side["provenance"] = c.provenance;
  if (c.labels) side["labels"] = *c.labels;
  if (c.provenance.size() > 1) {
    std::vector<std::string> sources;
    for (const auto& s : c.sentences) sources.push_back(s.source_dataset);
    side["sources"] = sources;
  }
  std::ofstream sj(path.string() + ".json");
  sj << side.dump() << '\n';
}

inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  nlohmann::json side;
  const std::filesystem::path side_path = path.string() + ".json";
  if (std::filesystem::exists(side_path)) {
    std::ifstream sj(side_path);
    try {
      sj >> side;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus sidecar " + side_path.string() + ": " + e.what());
    }
  }
  std::vector<std::string> sources;
  if (side.contains("sources")) sources = side["sources"].get<std::vector<std::string>>();
  std::string default_source = path.stem().string();
  if (side.contains("provenance") && side["provenance"].size() == 1)
    default_source = side["provenance"].begin().key();

  Corpus c;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& src = i < sources.size() ? sources[i] : default_source;
    c.sentences.push_back(parse_sentence(lines[i], src, i));
    ++c.provenance[src];
  }
  if (side.contains("labels")) {
    auto labels = side["labels"].get<std::vector<int>>();
    if (labels.size() != lines.size())
      throw FormatError("corpus sidecar has " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(lines.size()) + " sentences");
    c.labels = std::move(labels);
  }
  return c;
}

}  // namespace ptab
