#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ptab/error.hpp"

namespace ptab {

struct ScoredExample {
  double score = 0.0;  // positive-class probability
  int label = 0;
};

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted half.
/// O(n log n): average ranks over tied scores, then the positive rank sum.
inline double auc(const std::vector<ScoredExample>& ex) {
  std::size_t n_pos = 0;
  for (const auto& e : ex) {
    if (!std::isfinite(e.score)) throw ContractError("auc: non-finite score");
    if (e.label == 1) ++n_pos;
    else if (e.label != 0) throw ContractError("auc: labels must be 0 or 1");
  }
  const std::size_t n_neg = ex.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("auc: need at least one positive and one negative example");

  std::vector<std::size_t> order(ex.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ex[a].score < ex[b].score; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && ex[order[j]].score == ex[order[i]].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (ex[order[t]].label == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ContractError("auc: size mismatch");
  std::vector<ScoredExample> ex(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ex[i] = {scores[i], labels[i]};
  return auc(ex);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample (n - 1) standard deviation; 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace ptab
