#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptab/rng.hpp"
#include "ptab/table.hpp"

namespace ptab {

/// Generator for a categorical table whose label is a deterministic function
/// of two columns, with the remaining columns carrying correlated context.
///
/// Two hidden binary factors a and b are drawn per row. The first key column
/// takes a value from the half of its vocabulary selected by a, the second key
/// column likewise from b, and label = a XOR b (or a AND b). The context
/// columns copy a or b through the same value halves with probability
/// 1 - noise and are uniform otherwise, so co-occurrence statistics reveal
/// which values share a half without any label.
struct SyntheticSpec {
  std::size_t rows = 2000;
  std::size_t columns = 6;          // >= 2
  std::size_t values_per_column = 8;  // even
  double noise = 0.2;
  bool xor_rule = true;
  std::uint64_t seed = 0;
  std::string name = "synthetic";
};

inline const std::vector<std::string>& synthetic_headers() {
  static const std::vector<std::string> h = {
      "city", "occupation", "device", "channel", "plan", "region",
      "product", "segment", "season", "payment", "browser", "tier"};
  return h;
}

inline TableDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.columns < 2 || spec.columns > synthetic_headers().size())
    throw ContractError("make_synthetic: columns must be in [2, 12]");
  if (spec.values_per_column < 2 || spec.values_per_column % 2)
    throw ContractError("make_synthetic: values_per_column must be even and >= 2");
  TableDataset ds;
  ds.name = spec.name;
  ds.domain_tag = "synthetic";
  for (std::size_t c = 0; c < spec.columns; ++c) {
    const auto& h = synthetic_headers()[c];
    ds.schema.push_back({"c" + std::to_string(c), ColumnKind::categorical, h});
  }
  Rng rng = make_stream(spec.seed, "synthetic");
  const std::size_t half = spec.values_per_column / 2;
  auto value_name = [](std::size_t col, std::size_t v) {
    return synthetic_headers()[col].substr(0, 3) + "_" + std::string(1, static_cast<char>('a' + v));
  };
  for (std::size_t r = 0; r < spec.rows; ++r) {
    const int a = static_cast<int>(uniform_index(rng, 2));
    const int b = static_cast<int>(uniform_index(rng, 2));
    std::vector<std::string> row(spec.columns);
    for (std::size_t c = 0; c < spec.columns; ++c) {
      const int factor = (c % 2 == 0) ? a : b;
      std::size_t v;
      if (c < 2 || uniform01(rng) >= spec.noise)
        v = static_cast<std::size_t>(factor) * half + uniform_index(rng, half);
      else
        v = uniform_index(rng, spec.values_per_column);
      row[c] = value_name(c, v);
    }
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(spec.xor_rule ? (a ^ b) : (a & b));
  }
  return ds;
}

}  // namespace ptab
