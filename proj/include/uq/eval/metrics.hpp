#pragma once

#include <span>
#include <utility>
#include <vector>

namespace uq::eval {

struct PRCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision), one per tie block
  double auc = 0.0;
  double prevalence = 0.0;
};

/// Average precision with unsupported (label 1) as the positive class.
/// Scores are visited in descending order; equal scores form one block whose
/// precision is taken after the whole block. Raises kMetric when only one
/// class is present.
PRCurve pr_curve(std::span<const double> scores, std::span<const int> labels);
double pr_auc(std::span<const double> scores, std::span<const int> labels);

double prevalence(std::span<const int> labels);

/// Pearson correlation in double. `degenerate` is set when either side has
/// zero variance, in which case 0 is returned.
double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

}  // namespace uq::eval
