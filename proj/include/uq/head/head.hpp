#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "uq/datagen/claims.hpp"
#include "uq/datagen/dataset.hpp"
#include "uq/features/features.hpp"
#include "uq/numerics/nn.hpp"
#include "uq/numerics/optim.hpp"
#include "uq/toylm/model.hpp"

namespace uq::head {

struct UQHeadConfig {
  std::size_t input_dim = 0;
  std::size_t reduction_width = 64;  // hidden width of the reduction net
  std::size_t encoder_layers = 2;
  std::size_t encoder_width = 64;  // also the claim-embedding width
  std::size_t encoder_heads = 4;
  std::size_t classifier_hidden = 64;
  double dropout = 0.2;
  std::size_t max_len = 128;  // longer generations are cropped around the claim
  double positive_weight = 2.0;
  std::uint64_t seed = 1;

  void validate() const;  // kConfig
  std::string to_json() const;
  static UQHeadConfig from_json(const std::string& text);
  bool operator==(const UQHeadConfig&) const = default;

  /// Parameter count implied by the config alone.
  std::size_t parameter_count() const;
};

/// One claim ready for the network: cropped, normalized rows and the claim
/// rows within them.
struct ClaimInput {
  std::size_t rows = 0;
  std::size_t dim = 0;
  const float* values = nullptr;  // rows x dim, owned elsewhere
  std::vector<std::size_t> claim_rows;
};

/// Feature-reduction net (Linear, GELU, dropout, Linear), plus claim
/// membership and learned position embeddings, a bidirectional pre-norm
/// encoder with a final norm, mean pooling over claim rows, and a two-layer
/// classifier with a sigmoid.
template <typename T>
struct HeadNet {
  num::Linear<T> reduce1, reduce2;
  num::BasicTensor<T> claim_embedding;     // [2, W]; row 1 = inside the claim
  num::BasicTensor<T> position_embedding;  // [max_len, W]
  std::vector<num::TransformerBlock<T>> encoder;
  num::LayerNorm<T> final_norm;
  num::Linear<T> cls1, cls2;

  static HeadNet make(const UQHeadConfig& config);
  std::vector<num::BasicTensor<T>> parameters() const;

  /// Scores [B] for a batch of claims; dropout is active only when `rng` is
  /// given and `training` is set.
  num::BasicTensor<T> forward(const UQHeadConfig& config, const std::vector<ClaimInput>& batch, bool training,
                              std::mt19937_64* rng) const;
};

struct UQHead {
  UQHeadConfig config;
  feat::FeatureSpec spec;
  std::string fingerprint;  // of (spec, LM config) at training time
  feat::NormStats norm;
  HeadNet<float> net;
};

/// Rows [begin, end) of a generation of length `rows` that the head sees for
/// a claim: everything when it fits, otherwise a max_len window centred on
/// the claim span.
std::pair<std::size_t, std::size_t> crop_window(std::size_t rows, const std::vector<std::size_t>& claim_rows,
                                                std::size_t max_len);

/// Scores claims of one generation. `features` are raw (unnormalized);
/// claim rows are relative to the first generated token. Raises kClaim on an
/// empty claim and kCompatibility on a fingerprint mismatch.
std::vector<double> score_claims(const UQHead& head, const feat::FeatureMatrix& features,
                                 const std::vector<std::vector<std::size_t>>& claims);
/// Single-claim form taking a 0/1 mask over generated tokens.
double head_forward(const UQHead& head, const feat::FeatureMatrix& features, const std::vector<int>& claim_mask);

/// A labelled claim pointing into a feature-matrix list.
struct ClaimExample {
  std::size_t matrix = 0;
  std::vector<std::size_t> rows;  // relative to the first generated token
  int label = 0;                  // 1 = unsupported
};

/// Labelled (non-unknown) claims of one split; `matrices` is parallel to
/// dataset.generations.
std::vector<ClaimExample> claim_examples(const data::Dataset& dataset, const std::string& split);

struct HeadTrainOptions {
  std::size_t epochs = 7;
  std::size_t batch_claims = 16;
  num::AdamConfig adam{.peak_lr = 2e-4, .warmup_fraction = 0.1, .weight_decay = 0.1};
  std::uint64_t seed = 1;
  /// Stop once validation PR-AUC reaches this value (default: never).
  double stop_at_val = 2.0;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_pr_auc = 0.0;
};

struct HeadTrainReport {
  std::vector<EpochReport> epochs;
  std::size_t best_epoch = 0;
  double best_val_pr_auc = 0.0;
  double first_batch_loss = 0.0;  // loss of the very first batch before any update
};

struct HeadTrainResult {
  UQHead head;
  HeadTrainReport report;
};

/// Fits normalization on the training matrices, trains with weighted BCE,
/// and returns the epoch with the best validation PR-AUC. Raises
/// kDegenerateData when either split is single-class.
HeadTrainResult train_head(const std::vector<feat::FeatureMatrix>& matrices, const std::vector<ClaimExample>& train,
                           const std::vector<ClaimExample>& val, const feat::FeatureSpec& spec,
                           const lm::LMConfig& lm, UQHeadConfig config, const HeadTrainOptions& options);

/// Scores for examples using raw matrices.
std::vector<double> score_examples(const UQHead& head, const std::vector<feat::FeatureMatrix>& matrices,
                                   const std::vector<ClaimExample>& examples);

void save_head(const std::filesystem::path& path, const UQHead& head);
UQHead load_head(const std::filesystem::path& path);

struct ScoredClaim {
  data::ExtractedClaim claim;
  double score = 0.0;
};
struct Prediction {
  std::vector<lm::TokenId> tokens;
  std::size_t prompt_len = 0;
  std::vector<ScoredClaim> claims;
};

/// Greedy generation, trace capture, claim extraction and scoring.
Prediction predict_claims(const lm::LMWeights& weights, const lm::Tokenizer& tokenizer, const UQHead& head,
                          const std::string& prompt, std::size_t max_new);

}  // namespace uq::head
