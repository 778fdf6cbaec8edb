#include "uq/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uq/common/error.hpp"

namespace uq::eval {

double prevalence(std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

PRCurve pr_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::kMetric, "scores and labels differ in length");
  std::size_t total_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::kMetric, "labels must be 0 or 1");
    total_pos += static_cast<std::size_t>(l);
  }
  if (total_pos == 0) fail(ErrorCode::kMetric, "no positive (unsupported) claims");
  if (total_pos == labels.size()) fail(ErrorCode::kMetric, "no negative (supported) claims");
  for (double s : scores)
    if (std::isnan(s)) fail(ErrorCode::kMetric, "NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PRCurve curve;
  curve.prevalence = prevalence(labels);
  std::size_t tp = 0, seen = 0, prev_tp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      tp += static_cast<std::size_t>(labels[order[k]]);
      ++seen;
      ++k;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    // Summing tp-weighted precisions and dividing once keeps perfect
    // separation at exactly 1.0.
    curve.auc += static_cast<double>(tp - prev_tp) * precision;
    curve.points.emplace_back(recall, precision);
    prev_tp = tp;
  }
  curve.auc /= static_cast<double>(total_pos);
  return curve;
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) { return pr_curve(scores, labels).auc; }

double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate) {
  if (x.size() != y.size() || x.empty()) fail(ErrorCode::kMetric, "pearson needs two equal, non-empty samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const bool flat = sxx <= 0.0 || syy <= 0.0;
  if (degenerate != nullptr) *degenerate = flat;
  return flat ? 0.0 : std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace uq::eval
