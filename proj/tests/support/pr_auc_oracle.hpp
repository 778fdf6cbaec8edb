#pragma once

#include <algorithm>
#include <set>
#include <span>

#include "uq/common/error.hpp"

namespace uq::testing {

/// Average precision by explicit threshold enumeration: for every distinct
/// score s (descending), predict positive iff score >= s and accumulate
/// (TP(s) - TP(previous)) * P(s), divided by the positive count at the end.
/// O(n^2); n <= 12.
inline double pr_auc_bruteforce(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() > 12) fail(ErrorCode::kMetric, "brute-force AP is limited to n <= 12");
  std::size_t total_pos = 0;
  for (int l : labels) total_pos += static_cast<std::size_t>(l == 1);
  if (total_pos == 0 || total_pos == labels.size()) fail(ErrorCode::kMetric, "single-class labels");
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (double s : thresholds) {
    std::size_t tp = 0, predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= s) {
        ++predicted;
        tp += static_cast<std::size_t>(labels[i] == 1);
      }
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    ap += static_cast<double>(tp - prev_tp) * precision;
    prev_tp = tp;
  }
  return ap / static_cast<double>(total_pos);
}

}  // namespace uq::testing
