#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uq/features/features.hpp"
#include "uq/head/head.hpp"
#include "uq/numerics/nn.hpp"
#include "uq/toylm/trace.hpp"

namespace uq::base {

/// Higher = more likely a hallucination. Unsupervised scores are unbounded
/// and only meaningful as rankings.
struct ClaimScore {
  std::size_t generation = 0;
  std::size_t claim = 0;
  std::string method;
  double score = 0.0;
};

void write_scores(const std::filesystem::path& path, const std::vector<ClaimScore>& scores);
std::vector<ClaimScore> read_scores(const std::filesystem::path& path);

// Unsupervised scores over absolute claim positions (all >= prompt_len).
// Probabilities come from the trace logits in double; kClaim on an empty or
// out-of-range span.

/// 1 - prod P(t_i | x, t_<i).
double mcp(const lm::TraceRecord& trace, std::span<const std::size_t> positions);
/// exp(-mean log P(t_i | x, t_<i)).
double perplexity_score(const lm::TraceRecord& trace, std::span<const std::size_t> positions);
/// Mean entropy of P(. | x, t_<i) over the span.
double mean_token_entropy(const lm::TraceRecord& trace, std::span<const std::size_t> positions);

// SAPLMA: a token-level MLP on one layer's hidden states; a claim's score
// is the mean token score over its span.

struct SaplmaConfig {
  std::size_t layer = SIZE_MAX;  // SIZE_MAX: the middle layer, L/2
  std::size_t hidden = 64;
  std::size_t epochs = 30;
  std::size_t batch_tokens = 256;
  num::AdamConfig adam{.peak_lr = 1e-3, .warmup_fraction = 0.05, .weight_decay = 0.0};
  std::uint64_t seed = 1;
  double stop_at_train = 2.0;  // stop once training claim PR-AUC reaches this

  feat::FeatureSpec spec(const lm::LMConfig& lm) const;  // hidden family, one layer
};

struct Saplma {
  SaplmaConfig config;
  std::string fingerprint;
  feat::NormStats norm;
  num::Linear<float> l1, l2, l3;

  std::vector<num::Tensor> parameters() const;
  /// Sigmoid token scores for rows of one normalized-on-the-fly matrix.
  std::vector<double> token_scores(const feat::FeatureMatrix& features) const;
};

/// Trains on every generated token of the generations behind `train`; a
/// token is positive iff it lies in an unsupported training claim. `matrices`
/// must hold the features of `config.spec(lm)`.
Saplma saplma_train(const std::vector<feat::FeatureMatrix>& matrices, const std::vector<head::ClaimExample>& train,
                    const lm::LMConfig& lm, const SaplmaConfig& config);
double saplma_score(const Saplma& model, const feat::FeatureMatrix& features, std::span<const std::size_t> rows);
std::vector<double> saplma_scores(const Saplma& model, const std::vector<feat::FeatureMatrix>& matrices,
                                  const std::vector<head::ClaimExample>& examples);

// Lookback lens: logistic regression on claim-averaged lookback ratios.

struct LookbackConfig {
  std::size_t iterations = 2000;
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

struct LookbackModel {
  std::string fingerprint;
  std::vector<double> mean, inv_std;  // claim-feature standardization
  std::vector<double> weights;
  double bias = 0.0;
};

/// Mean of the lookback rows over the claim span.
std::vector<double> claim_lookback_features(const feat::FeatureMatrix& lookback, std::span<const std::size_t> rows);
LookbackModel lookback_train(const std::vector<feat::FeatureMatrix>& matrices,
                             const std::vector<head::ClaimExample>& train, const LookbackConfig& config);
double lookback_score(const LookbackModel& model, const feat::FeatureMatrix& lookback, std::span<const std::size_t> rows);
std::vector<double> lookback_scores(const LookbackModel& model, const std::vector<feat::FeatureMatrix>& matrices,
                                    const std::vector<head::ClaimExample>& examples);
/// Signed margin w.x + b per example.
std::vector<double> lookback_margins(const LookbackModel& model, const std::vector<feat::FeatureMatrix>& matrices,
                                     const std::vector<head::ClaimExample>& examples);

// Factoscope: the UHead architecture on hidden states, per-layer top
// logits, adjacent-layer top-token similarities and ranks.

feat::FeatureSpec factoscope_spec(std::size_t top_m);
head::HeadTrainResult factoscope_head(const std::vector<feat::FeatureMatrix>& matrices,
                                      const std::vector<head::ClaimExample>& train,
                                      const std::vector<head::ClaimExample>& val, const lm::LMConfig& lm,
                                      const head::UQHeadConfig& config, const head::HeadTrainOptions& options,
                                      std::size_t top_m);

void save_saplma(const std::filesystem::path& path, const Saplma& model);
Saplma load_saplma(const std::filesystem::path& path);
void save_lookback(const std::filesystem::path& path, const LookbackModel& model);
LookbackModel load_lookback(const std::filesystem::path& path);

}  // namespace uq::base
