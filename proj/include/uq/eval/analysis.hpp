#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uq/datagen/dataset.hpp"
#include "uq/features/features.hpp"
#include "uq/head/head.hpp"

namespace uq::eval {

// Token-level samples for the attention analysis: every generated token of
// the given generations, labelled 1 when it lies inside an unsupported
// claim. Column (l, q) of offset j holds alpha^{q,l}_{i, i-j}; tokens with
// i - j < 0 are skipped for that offset.
struct AttentionSample {
  std::size_t offset = 1;
  std::size_t layers = 0, heads = 0;
  std::vector<double> values;  // [n][layers*heads], layer-major
  std::vector<double> labels;  // 0/1
  std::size_t rows() const { return labels.size(); }
};

AttentionSample attention_sample(const std::vector<const data::GenerationRecord*>& generations, std::size_t offset);

struct CorrelationCell {
  std::size_t offset = 0, layer = 0, head = 0;
  double rho = 0.0;
  bool degenerate = false;  // zero-variance attention column, rho recorded as 0
};

struct CorrelationTable {
  std::vector<std::size_t> offsets;
  std::vector<CorrelationCell> cells;  // offset-major, then layer, then head
  std::vector<double> max_abs;         // per offset
  std::size_t tokens = 0;
  double positive_rate = 0.0;
};

/// Pearson correlation of every (layer, head) column with the token label.
/// kMetric when the sampled labels are constant.
std::vector<CorrelationCell> correlate(const AttentionSample& sample);
CorrelationTable attention_correlation(const std::vector<const data::GenerationRecord*>& generations,
                                       const std::vector<std::size_t>& offsets);

/// Null distribution of max |rho| over all columns when labels are shuffled
/// across tokens.
struct PermutationNull {
  std::size_t permutations = 0;
  double observed = 0.0;     // max |rho| on the true labels
  double percentile = 0.0;   // the requested quantile of the null maxima
  double quantile = 0.99;
  std::size_t cells_above = 0;  // cells whose |rho| exceeds the quantile
  bool exceeded() const { return cells_above > 0; }
};

PermutationNull permutation_null(const AttentionSample& sample, std::size_t permutations, std::uint64_t seed,
                                 double quantile = 0.99);

std::string correlation_csv(const CorrelationTable& table);

// Attention-window sweep: one head per k, trained with the same seed and
// scored on the validation split.

struct SweepPoint {
  std::size_t k = 0;
  double val_pr_auc = 0.0;
  std::size_t best_epoch = 0;
};

inline const std::vector<std::size_t> kSweepWindows{1, 2, 3, 5, 10};

std::vector<SweepPoint> sweep_window(const data::Dataset& dataset, const lm::LMWeights& weights,
                                     const std::vector<std::size_t>& ks, const feat::FeatureSpec& base_spec,
                                     const head::UQHeadConfig& config, const head::HeadTrainOptions& options,
                                     std::size_t jobs = 1);

std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace uq::eval
