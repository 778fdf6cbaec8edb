#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uq/numerics/nn.hpp"
#include "uq/numerics/optim.hpp"
#include "uq/toylm/tokenizer.hpp"
#include "uq/toylm/trace.hpp"

namespace uq::lm {

struct LMConfig {
  std::size_t vocab = 0;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t width = 128;
  std::size_t ff_width = 512;
  std::size_t max_len = 256;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static LMConfig from_json(const std::string& text);
  bool operator==(const LMConfig&) const = default;
};

/// Parameter order (also the checkpoint order): token embedding [V,d],
/// position embedding [max_len,d], each block (ln1, qkv, proj, ln2, fc, out;
/// weight before bias), final norm, unembedding [V,d].
struct LMWeights {
  LMConfig config;
  num::Tensor token_embedding;
  num::Tensor position_embedding;
  std::vector<num::TransformerBlock<float>> blocks;
  num::LayerNorm<float> final_norm;
  num::Tensor unembedding;

  std::vector<num::Tensor> parameters() const;
};

LMWeights init_lm(const LMConfig& config);

/// Inference forward pass recording everything the features need. Layer l
/// hidden state is block l's output; the last layer's additionally passes
/// the final norm. `prompt_len` only decides which logits rows are kept.
TraceRecord forward_with_trace(const LMWeights& weights, std::span<const TokenId> tokens, std::size_t prompt_len);

/// Next-token logits after the last position, bit-identical to the
/// matching row a full trace would hold.
std::vector<float> next_token_logits(const LMWeights& weights, std::span<const TokenId> tokens);

struct Generation {
  std::vector<TokenId> tokens;  // prompt followed by generated tokens
  std::size_t prompt_len = 0;
  TraceRecord trace;
};

/// Greedy decoding until eos, max_new tokens, or the context limit. Ties go
/// to the lowest token id. The eos token, when produced, is kept.
Generation generate_greedy(const LMWeights& weights, std::span<const TokenId> prompt, std::size_t max_new,
                           TokenId eos = Tokenizer::kEos);
/// Same decoding without capturing a trace.
std::vector<TokenId> generate_tokens(const LMWeights& weights, std::span<const TokenId> prompt, std::size_t max_new,
                                     TokenId eos = Tokenizer::kEos);

/// E applied to layer `layer` (0-based) at every position: [S x V] row-major.
std::vector<float> layer_logits(const LMWeights& weights, const TraceRecord& trace, std::size_t layer);
/// Rows [row_begin, row_end) only.
std::vector<float> layer_logits(const LMWeights& weights, const TraceRecord& trace, std::size_t layer,
                                std::size_t row_begin, std::size_t row_end);

/// Mean next-token negative log-likelihood of tokens[from..] given their
/// prefixes. `from` must be at least 1.
double mean_nll(const LMWeights& weights, std::span<const TokenId> tokens, std::size_t from);

struct LMTrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_tokens = 2048;
  num::AdamConfig adam{.peak_lr = 3e-3, .warmup_fraction = 0.05, .weight_decay = 0.0};
  std::uint64_t seed = 1;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;  // progress only
};

struct LossPoint {
  std::size_t step;
  double loss;
};

struct LMTrainResult {
  LMWeights weights;
  std::vector<LossPoint> loss_curve;
};

/// Next-token cross-entropy training. Documents longer than max_len are
/// truncated. A non-finite loss raises kDivergence.
LMTrainResult train_lm(const LMConfig& config, const std::vector<std::vector<TokenId>>& corpus,
                       const LMTrainOptions& options);

void save_lm(const std::filesystem::path& path, const LMWeights& weights);
LMWeights load_lm(const std::filesystem::path& path);

}  // namespace uq::lm
