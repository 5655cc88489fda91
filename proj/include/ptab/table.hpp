#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/csv.hpp"
#include "ptab/error.hpp"
#include "ptab/rng.hpp"

namespace ptab {

enum class ColumnKind { numeric, categorical, textual };

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::textual: return "textual";
  }
  return "categorical";
}

inline ColumnKind parse_column_kind(const std::string& s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "categorical") return ColumnKind::categorical;
  if (s == "textual") return ColumnKind::textual;
  throw SchemaError("unknown column kind '" + s + "'");
}

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::string header_text;  // rendered in front of every value of the column
};

using Schema = std::vector<ColumnSchema>;

inline void validate_schema(const Schema& schema) {
  std::unordered_set<std::string> seen;
  for (const auto& c : schema) {
    if (c.name.empty()) throw SchemaError("column name must be nonempty");
    if (c.header_text.empty())
      throw SchemaError("column '" + c.name + "' has empty header_text");
    if (!seen.insert(c.name).second)
      throw SchemaError("duplicate column name '" + c.name + "'");
  }
}

/// Everything a schema file carries besides the columns themselves.
struct DatasetSpec {
  std::string name;
  Schema schema;
  std::string label_column;
  std::string positive_label;
  std::string domain_tag;
};

inline DatasetSpec parse_dataset_spec(const nlohmann::json& j) {
  DatasetSpec spec;
  try {
    for (const auto& c : j.at("columns")) {
      ColumnSchema col;
      col.name = c.at("name").get<std::string>();
      col.kind = parse_column_kind(c.value("kind", std::string("categorical")));
      col.header_text = c.value("header_text", col.name);
      spec.schema.push_back(std::move(col));
    }
    spec.label_column = j.at("label_column").get<std::string>();
    spec.positive_label = j.at("positive_label").get<std::string>();
    spec.domain_tag = j.value("domain_tag", std::string());
    spec.name = j.value("name", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
  validate_schema(spec.schema);
  return spec;
}

inline DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file " + path.string() + ": " + e.what());
  }
  auto spec = parse_dataset_spec(j);
  if (spec.name.empty()) spec.name = path.stem().string();
  return spec;
}

inline nlohmann::json to_json(const DatasetSpec& spec) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : spec.schema) {
    cols.push_back({{"name", c.name},
                    {"kind", to_string(c.kind)},
                    {"header_text", c.header_text}});
  }
  return {{"name", spec.name},
          {"columns", cols},
          {"label_column", spec.label_column},
          {"positive_label", spec.positive_label},
          {"domain_tag", spec.domain_tag}};
}

/// Rows of verbatim cell text (empty = missing) plus binary labels.
struct TableDataset {
  std::string name;
  std::string domain_tag;
  Schema schema;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> labels;

  std::size_t size() const { return rows.size(); }
  std::size_t width() const { return schema.size(); }

  void validate() const {
    validate_schema(schema);
    if (rows.size() != labels.size())
      throw ContractError("row count and label count differ");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != schema.size())
        throw RowError("row " + std::to_string(i) + " has " +
                           std::to_string(rows[i].size()) + " cells, schema has " +
                           std::to_string(schema.size()),
                       0);
      if (labels[i] != 0 && labels[i] != 1)
        throw LabelError("label of row " + std::to_string(i) + " is not binary");
    }
  }

  std::size_t column_index(const std::string& column) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].name == column) return i;
    throw SchemaError("unknown column '" + column + "'");
  }
};

/// Reads a CSV whose header row is the schema's column names in order, with
/// `label_column` inserted at any position.
inline TableDataset read_csv(std::istream& in, const Schema& schema,
                             const std::string& label_column,
                             const std::string& positive_label) {
  validate_schema(schema);
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError("CSV input is empty");

  std::size_t label_at = header->cells.size();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < header->cells.size(); ++i) {
    if (header->cells[i] == label_column && label_at == header->cells.size())
      label_at = i;
    else
      names.push_back(header->cells[i]);
  }
  if (label_at == header->cells.size())
    throw SchemaError("label column '" + label_column + "' not in CSV header");
  bool match = names.size() == schema.size();
  for (std::size_t i = 0; match && i < names.size(); ++i)
    match = names[i] == schema[i].name;
  if (!match) {
    std::string expected, got;
    for (const auto& c : schema) expected += (expected.empty() ? "" : ",") + c.name;
    for (const auto& n : names) got += (got.empty() ? "" : ",") + n;
    throw SchemaError("CSV header mismatch: expected [" + expected + "], got [" +
                      got + "]");
  }

  TableDataset ds;
  ds.schema = schema;
  std::string negative_label;
  bool have_negative = false;
  const std::size_t width = schema.size() + 1;
  while (auto rec = reader.next()) {
    if (rec->cells.size() == 1 && rec->cells[0].empty()) continue;  // blank line
    if (rec->cells.size() != width)
      throw RowError("line " + std::to_string(rec->line) + ": expected " +
                         std::to_string(width) + " cells, found " +
                         std::to_string(rec->cells.size()),
                     rec->line);
    const std::string& raw = rec->cells[label_at];
    int y;
    if (raw == positive_label) {
      y = 1;
    } else if (raw.empty()) {
      throw LabelError("line " + std::to_string(rec->line) + ": missing label");
    } else if (!have_negative || raw == negative_label) {
      negative_label = raw;
      have_negative = true;
      y = 0;
    } else {
      throw LabelError("line " + std::to_string(rec->line) +
                       ": unknown label value '" + raw + "' (positive '" +
                       positive_label + "', negative '" + negative_label + "')");
    }
    rec->cells.erase(rec->cells.begin() + static_cast<std::ptrdiff_t>(label_at));
    ds.rows.push_back(std::move(rec->cells));
    ds.labels.push_back(y);
  }
  return ds;
}

inline TableDataset load_csv(const std::filesystem::path& path,
                             const Schema& schema,
                             const std::string& label_column,
                             const std::string& positive_label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open data file " + path.string());
  auto ds = read_csv(in, schema, label_column, positive_label);
  ds.name = path.stem().string();
  return ds;
}

inline TableDataset load_csv(const std::filesystem::path& path,
                             const DatasetSpec& spec) {
  auto ds = load_csv(path, spec.schema, spec.label_column, spec.positive_label);
  if (!spec.name.empty()) ds.name = spec.name;
  ds.domain_tag = spec.domain_tag;
  return ds;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
  std::uint64_t seed = 0;
};

struct LabeledSubset {
  std::vector<std::size_t> labeled_indices;
  std::vector<std::size_t> unlabeled_indices;
  std::size_t n_labeled = 0;
};

namespace detail {

/// Indices grouped by class (positives first), each class shuffled. Evenly
/// spaced picks from this ordering are stratified to within one example.
inline std::vector<std::size_t> class_ordered(std::vector<std::size_t> idx,
                                              const std::vector<int>& labels,
                                              Rng& rng) {
  std::vector<std::size_t> pos, neg;
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) (labels.at(i) == 1 ? pos : neg).push_back(i);
  shuffle(pos.begin(), pos.end(), rng);
  shuffle(neg.begin(), neg.end(), rng);
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

/// Systematic sample of exactly `m` of `n` positions: position j is taken iff
/// floor((j+1)m/n) > floor(jm/n).
inline std::vector<bool> systematic_pick(std::size_t n, std::size_t m) {
  std::vector<bool> take(n, false);
  if (n == 0) return take;
  for (std::size_t j = 0; j < n; ++j)
    take[j] = ((j + 1) * m) / n > (j * m) / n;
  return take;
}

}  // namespace detail

inline constexpr double kValFraction = 0.15;

/// Stratified k-fold plan: fold f tests on part f, draws a stratified 15% of
/// the dataset from the remaining rows for validation, and trains on the rest.
/// For k = 5 that is the 65/15/20 split.
inline FoldPlan make_folds(const std::vector<int>& labels, std::size_t k,
                           std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw SizeError("make_folds: k must be >= 2");
  if (n < k)
    throw SizeError("make_folds: " + std::to_string(n) + " rows < k = " +
                    std::to_string(k));
  Rng rng = make_stream(seed, "folds");
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  const auto order = detail::class_ordered(all, labels, rng);

  std::vector<std::size_t> part(n);
  for (std::size_t j = 0; j < n; ++j) part[order[j]] = j % k;

  const auto n_val = static_cast<std::size_t>(std::llround(kValFraction * n));
  FoldPlan plan;
  plan.seed = seed;
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    std::vector<std::size_t> rest;
    for (auto i : order) (part[i] == f ? fold.test : rest).push_back(i);
    const auto take = detail::systematic_pick(rest.size(), std::min(n_val, rest.size()));
    for (std::size_t j = 0; j < rest.size(); ++j)
      (take[j] ? fold.val : fold.train).push_back(rest[j]);
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
    std::sort(fold.test.begin(), fold.test.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

inline FoldPlan make_folds(const TableDataset& ds, std::size_t k,
                           std::uint64_t seed) {
  return make_folds(ds.labels, k, seed);
}

/// Stratified draw of exactly `n_labeled` of `train_indices`. Both output
/// index lists are sorted ascending.
inline LabeledSubset subsample_labeled(const std::vector<std::size_t>& train_indices,
                                       const std::vector<int>& labels,
                                       std::size_t n_labeled, std::uint64_t seed) {
  if (n_labeled > train_indices.size())
    throw SizeError("subsample_labeled: n_labeled " + std::to_string(n_labeled) +
                    " exceeds " + std::to_string(train_indices.size()) +
                    " training rows");
  Rng rng = make_stream(seed, "subsample");
  const auto order = detail::class_ordered(train_indices, labels, rng);
  const auto take = detail::systematic_pick(order.size(), n_labeled);
  LabeledSubset s;
  s.n_labeled = n_labeled;
  for (std::size_t j = 0; j < order.size(); ++j)
    (take[j] ? s.labeled_indices : s.unlabeled_indices).push_back(order[j]);
  std::sort(s.labeled_indices.begin(), s.labeled_indices.end());
  std::sort(s.unlabeled_indices.begin(), s.unlabeled_indices.end());
  return s;
}

/// Rows `indices` of `ds`, in the given order.
inline TableDataset select_rows(const TableDataset& ds,
                                const std::vector<std::size_t>& indices) {
  TableDataset out;
  out.name = ds.name;
  out.domain_tag = ds.domain_tag;
  out.schema = ds.schema;
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.rows.push_back(ds.rows.at(i));
    out.labels.push_back(ds.labels.at(i));
  }
  return out;
}

}  // namespace ptab
