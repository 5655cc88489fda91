#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/checkpoint.hpp"
#include "ptab/csv.hpp"
#include "ptab/encoder.hpp"
#include "ptab/error.hpp"
#include "ptab/table.hpp"
#include "ptab/textualizer.hpp"
#include "ptab/tokenizer.hpp"

namespace ptab {

/// Which attention maps are read. Defaults to the last layer, head mean.
struct AttentionOptions {
  std::optional<std::size_t> layer;  // nullopt: last layer
  std::optional<std::size_t> head;   // nullopt: mean over heads
  bool mean_over_layers = false;

  std::string describe(std::size_t n_layers) const {
    std::string s = mean_over_layers ? "layers=mean"
                                     : "layer=" + std::to_string(layer.value_or(n_layers - 1));
    s += head ? ",head=" + std::to_string(*head) : std::string(",head=mean");
    return s;
  }
};

struct FieldScore {
  std::string field;
  double score = 0.0;
};

/// [CLS]-query attention over the real tokens of one sentence.
struct AttentionReport {
  std::vector<std::string> tokens;       // real positions, [CLS] first
  std::vector<double> per_token_scores;  // aligned with tokens
  std::vector<FieldScore> per_field_scores;
  double cls_self = 0.0;       // weight of [CLS] on itself
  double special_mass = 0.0;   // positions outside every field: [CLS], [SEP]
  std::string aggregation;
  /// Raw [CLS] rows of every selected (layer, head) map before reduction.
  std::vector<std::vector<double>> head_rows;
};

inline nlohmann::json to_json(const AttentionReport& r) {
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : r.per_field_scores) fields.push_back({{"field", f.field}, {"score", f.score}});
  return {{"tokens", r.tokens},
          {"per_token_scores", r.per_token_scores},
          {"per_field_scores", fields},
          {"cls_self", r.cls_self},
          {"special_mass", r.special_mass},
          {"aggregation", r.aggregation}};
}

namespace detail {

inline std::vector<std::string> token_texts(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.n_real; ++i) out.push_back(vocab.token(seq.ids[i]));
  return out;
}

inline const Vocabulary& checkpoint_vocab(const Checkpoint& ck) {
  if (!ck.meta.vocab) throw ContractError("checkpoint carries no vocabulary");
  return *ck.meta.vocab;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string gray(double v, double max) {
  const double t = max > 0.0 ? std::clamp(v / max, 0.0, 1.0) : 0.0;
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", g, g, g);
  return buf;
}

}  // namespace detail

/// Attention paid by the [CLS] query to each real token, reduced as `opts`
/// says; field scores sum the scores of each field's tokens.
inline AttentionReport cls_attention(const Checkpoint& ck, const Sentence& sentence,
                                     const AttentionOptions& opts = {}) {
  const auto& vocab = detail::checkpoint_vocab(ck);
  const auto& cfg = ck.config();
  if (opts.layer && *opts.layer >= cfg.n_layers)
    throw RangeError("layer " + std::to_string(*opts.layer) + " out of range");
  if (opts.head && *opts.head >= cfg.n_heads)
    throw RangeError("head " + std::to_string(*opts.head) + " out of range");
  const auto seq = encode(sentence, vocab, cfg.max_len);
  const auto out = nn::forward(ck.params, seq, nn::Mode::embed);

  std::vector<std::size_t> layers;
  if (opts.mean_over_layers) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) layers.push_back(l);
  } else {
    layers.push_back(opts.layer.value_or(cfg.n_layers - 1));
  }
  std::vector<std::size_t> heads;
  if (opts.head) {
    heads.push_back(*opts.head);
  } else {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) heads.push_back(h);
  }

  AttentionReport r;
  r.tokens = detail::token_texts(seq, vocab);
  r.aggregation = opts.describe(cfg.n_layers);
  r.per_token_scores.assign(seq.n_real, 0.0);
  for (auto l : layers)
    for (auto h : heads) {
      const auto& A = out.attention[l][h];
      std::vector<double> row(seq.n_real);
      for (std::size_t k = 0; k < seq.n_real; ++k) row[k] = static_cast<double>(A(0, static_cast<Eigen::Index>(k)));
      for (std::size_t k = 0; k < seq.n_real; ++k) r.per_token_scores[k] += row[k];
      r.head_rows.push_back(std::move(row));
    }
  const double n_maps = static_cast<double>(layers.size() * heads.size());
  for (auto& s : r.per_token_scores) s /= n_maps;

  r.cls_self = r.per_token_scores[0];
  std::vector<bool> in_field(seq.n_real, false);
  for (std::size_t f = 0; f < sentence.phrases.size(); ++f) {
    double s = 0.0;
    if (f < seq.token_spans.size())
      for (auto k = seq.token_spans[f].begin; k < seq.token_spans[f].end; ++k) {
        s += r.per_token_scores[k];
        in_field[k] = true;
      }
    r.per_field_scores.push_back({sentence.phrases[f].header, s});
  }
  for (std::size_t k = 0; k < seq.n_real; ++k)
    if (!in_field[k]) r.special_mass += r.per_token_scores[k];
  return r;
}

/// One row, one cell per token, darker for more attention.
inline void write_attention_svg(std::ostream& out, const AttentionReport& r) {
  const int cell = 56, label_h = 20;
  const auto n = static_cast<int>(r.tokens.size());
  const double mx = r.per_token_scores.empty()
                        ? 0.0
                        : *std::max_element(r.per_token_scores.begin(), r.per_token_scores.end());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << n * cell << "\" height=\""
      << cell + 2 * label_h << "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (int i = 0; i < n; ++i) {
    const auto s = r.per_token_scores[static_cast<std::size_t>(i)];
    out << "  <rect x=\"" << i * cell << "\" y=\"" << label_h << "\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"" << detail::gray(s, mx)
        << "\" stroke=\"#999\"><title>" << detail::xml_escape(r.tokens[static_cast<std::size_t>(i)])
        << ": " << s << "</title></rect>\n";
    out << "  <text x=\"" << i * cell + cell / 2 << "\" y=\"" << label_h - 6
        << "\" text-anchor=\"middle\">" << detail::xml_escape(r.tokens[static_cast<std::size_t>(i)])
        << "</text>\n";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", s);
    out << "  <text x=\"" << i * cell + cell / 2 << "\" y=\"" << cell + 2 * label_h - 6
        << "\" text-anchor=\"middle\">" << buf << "</text>\n";
  }
  out << "</svg>\n";
}

/// Pairwise Euclidean distances between [CLS] embeddings.
struct SimilarityMatrix {
  std::vector<std::string> values;
  std::vector<std::vector<double>> distances;
};

inline nlohmann::json to_json(const SimilarityMatrix& m) {
  return {{"values", m.values}, {"distances", m.distances}};
}

/// Substitutes each candidate into `column` of `base_row`, embeds the
/// resulting sentence and returns all pairwise distances.
inline SimilarityMatrix value_similarity(const Checkpoint& ck, const Schema& schema,
                                         const std::vector<std::string>& base_row,
                                         const std::string& column,
                                         const std::vector<std::string>& candidates,
                                         const TextualizeOptions& opts = {}) {
  const auto& vocab = detail::checkpoint_vocab(ck);
  std::size_t col = schema.size();
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (schema[i].name == column) col = i;
  if (col == schema.size()) throw SchemaError("unknown column '" + column + "'");
  if (candidates.size() < 2) throw ContractError("value_similarity needs at least two candidates");

  std::vector<nn::Mat<double>> emb;
  for (const auto& v : candidates) {
    auto row = base_row;
    row.at(col) = v;
    const auto s = textualize_row(row, schema, opts);
    emb.push_back(nn::embed_cls(ck.params, encode(s, vocab, ck.config().max_len)).cast<double>());
  }
  SimilarityMatrix m;
  m.values = candidates;
  m.distances.assign(candidates.size(), std::vector<double>(candidates.size(), 0.0));
  for (std::size_t i = 0; i < candidates.size(); ++i)
    for (std::size_t j = i + 1; j < candidates.size(); ++j)
      m.distances[i][j] = m.distances[j][i] = (emb[i] - emb[j]).norm();
  return m;
}

inline void write_similarity_csv(std::ostream& out, const SimilarityMatrix& m) {
  std::vector<std::string> header = {""};
  header.insert(header.end(), m.values.begin(), m.values.end());
  csv::write_row(out, header);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    std::vector<std::string> row = {m.values[i]};
    for (double d : m.distances[i]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", d);
      row.emplace_back(buf);
    }
    csv::write_row(out, row);
  }
}

/// Square grid, darker for closer pairs.
inline void write_similarity_svg(std::ostream& out, const SimilarityMatrix& m) {
  const int cell = 32, margin = 80;
  const auto n = static_cast<int>(m.values.size());
  double mx = 0.0;
  for (const auto& r : m.distances)
    for (double d : r) mx = std::max(mx, d);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << margin + n * cell
      << "\" height=\"" << margin + n * cell << "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (int i = 0; i < n; ++i) {
    const auto label = detail::xml_escape(m.values[static_cast<std::size_t>(i)]);
    out << "  <text x=\"" << margin - 4 << "\" y=\"" << margin + i * cell + cell / 2 + 4
        << "\" text-anchor=\"end\">" << label << "</text>\n";
    out << "  <text x=\"" << margin + i * cell + cell / 2 << "\" y=\"" << margin - 4
        << "\" text-anchor=\"middle\">" << label << "</text>\n";
    for (int j = 0; j < n; ++j) {
      const double d = m.distances[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      out << "  <rect x=\"" << margin + j * cell << "\" y=\"" << margin + i * cell
          << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << detail::gray(mx - d, mx) << "\"><title>" << d << "</title></rect>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace ptab
