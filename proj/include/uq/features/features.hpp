#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uq/toylm/model.hpp"
#include "uq/toylm/trace.hpp"

namespace uq::feat {

/// Listed in concatenation order.
enum class Family { kHidden, kLookback, kFactoscopeLogits, kFactoscopeSim, kFactoscopeRank, kAttWindow, kTopProb };
inline constexpr std::array<Family, 7> kFamilyOrder{Family::kHidden,         Family::kLookback,
                                                    Family::kFactoscopeLogits, Family::kFactoscopeSim,
                                                    Family::kFactoscopeRank,  Family::kAttWindow,
                                                    Family::kTopProb};
const char* family_name(Family family);
Family family_from_name(const std::string& name);  // kConfig on unknown names

/// Which families to extract and their knobs. `layers` is 0-based and
/// applies to every layer-indexed family; empty means all layers.
struct FeatureSpec {
  std::vector<Family> families{Family::kAttWindow, Family::kTopProb};
  std::size_t window = 2;  // k, attention predecessors per head
  std::size_t top_m = 10;  // m, for top_prob and the factoscope families
  std::vector<std::size_t> layers;

  bool enabled(Family family) const;
  /// Families in concatenation order, duplicates dropped.
  std::vector<Family> ordered() const;
  std::vector<std::size_t> layer_list(const lm::LMConfig& lm) const;
  void validate(const lm::LMConfig& lm) const;  // kConfig

  std::string to_json() const;
  static FeatureSpec from_json(const std::string& text);
  bool operator==(const FeatureSpec&) const = default;

  static FeatureSpec only(Family family, std::size_t window = 2, std::size_t top_m = 10);
};

std::size_t family_dim(Family family, const FeatureSpec& spec, const lm::LMConfig& lm);
std::size_t feature_dim(const FeatureSpec& spec, const lm::LMConfig& lm);
/// First 16 hex digits of SHA-256 over the canonical spec and LM config JSON.
std::string fingerprint(const FeatureSpec& spec, const lm::LMConfig& lm);

/// One row per generated token (absolute position prompt_len + r).
struct FeatureMatrix {
  std::size_t generation = 0;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::string fingerprint;

  std::span<const float> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
  std::span<float> row(std::size_t r) { return {values.data() + r * dim, dim}; }
  float at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }
};

// Families. Attention and hidden-state features of the generated token at
// position i read row i of the trace; the probability and factoscope
// families read the distribution that produced token i (row i-1 of the
// layer logits). Layer blocks follow `layers` order.

/// Layer blocks of width d.
FeatureMatrix f_hidden(const lm::TraceRecord& trace, const std::vector<std::size_t>& layers);
/// Layout (l outer, q inner). A_gen averages over generated predecessors
/// and is 0 for the first generated token.
FeatureMatrix lookback_ratio(const lm::TraceRecord& trace, const std::vector<std::size_t>& layers);
/// Layout (l outer, q middle, j = 1..k inner); zero where i-j < 0.
FeatureMatrix f_att(const lm::TraceRecord& trace, std::size_t k, const std::vector<std::size_t>& layers);
/// Descending top-m log-probabilities of the final distribution.
FeatureMatrix f_prob(const lm::TraceRecord& trace, std::size_t m);
/// Per layer, top-m logits of z^l in descending order.
FeatureMatrix factoscope_logits(const lm::TraceRecord& trace, const lm::LMWeights& weights, std::size_t m,
                                const std::vector<std::size_t>& layers);
/// Per adjacent pair (layers[a], layers[a+1]), m x m cosines between the
/// unembedding rows of the two top-m sets; layout (pair, w1 rank, w2 rank).
FeatureMatrix factoscope_sim(const lm::TraceRecord& trace, const lm::LMWeights& weights, std::size_t m,
                             const std::vector<std::size_t>& layers);
/// Per layer, 1/rank of the realized token in z^l (rank 1 = largest logit,
/// ties go to the lower token id).
FeatureMatrix factoscope_rank(const lm::TraceRecord& trace, const lm::LMWeights& weights,
                              const std::vector<std::size_t>& layers);

/// Concatenation in kFamilyOrder. `weights` is required only for the
/// factoscope families (kConfig when missing) and must match the trace.
FeatureMatrix concat_features(const lm::TraceRecord& trace, const FeatureSpec& spec, const lm::LMConfig& lm,
                              const lm::LMWeights* weights = nullptr);

/// Indices of the top-m entries, descending by value, ties to the lower index.
std::vector<std::size_t> top_indices(std::span<const float> values, std::size_t m);

/// Per-column z-scores fitted on training rows.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> inv_std;  // 1/std, or 1 for (near-)constant columns

  static NormStats fit(const std::vector<const FeatureMatrix*>& matrices);
  void apply(FeatureMatrix& m) const;  // kDimension on width mismatch
  std::vector<float> flat() const;      // mean then inv_std
  static NormStats from_flat(std::span<const float> values);
  bool empty() const { return mean.empty(); }
};

}  // namespace uq::feat
