#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uq/common/io.hpp"

namespace uq::lm {

/// Everything recorded from one forward pass. Positions are 0-based; the
/// first `prompt_len` tokens are the prompt.
struct TraceRecord {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t width = 0;
  std::size_t vocab = 0;
  std::size_t prompt_len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<float> hidden;     // [L][S][d]
  std::vector<float> attention;  // [L][Q][S][S], zero above the diagonal
  std::vector<float> logits;     // [T][V]; row r predicts tokens[prompt_len + r]

  std::size_t seq_len() const { return tokens.size(); }
  std::size_t gen_len() const { return tokens.size() - prompt_len; }

  std::span<const float> hidden_state(std::size_t layer, std::size_t pos) const {
    return {hidden.data() + (layer * seq_len() + pos) * width, width};
  }
  float attn(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const {
    const std::size_t s = seq_len();
    return attention[((layer * heads + head) * s + i) * s + j];
  }
  /// Logits predicting the token at absolute position `pos` (pos >= prompt_len).
  std::span<const float> logits_for(std::size_t pos) const {
    return {logits.data() + (pos - prompt_len) * vocab, vocab};
  }

  /// Checks sizes against the header fields; throws kFormat on mismatch.
  void validate() const;
};

/// Trace blob: "UQT1", u32 version, u32 L, Q, d, S, n, V, u32 tokens[S],
/// then f32 hidden, attention, logits in the layouts above.
void write_trace(BinaryWriter& out, const TraceRecord& trace);
TraceRecord read_trace(BinaryReader& in);

}  // namespace uq::lm
