#include "uq/toylm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

#include "uq/common/error.hpp"
#include "uq/toylm/checkpoint.hpp"

namespace uq::lm {

using num::Tensor;

void LMConfig::validate() const {
  if (vocab < 5) fail(ErrorCode::kConfig, "LM vocabulary must hold the special tokens and at least one word");
  if (layers < 2) fail(ErrorCode::kConfig, "LM needs at least 2 layers");
  if (heads < 2) fail(ErrorCode::kConfig, "LM needs at least 2 heads");
  if (width == 0 || width % heads != 0) {
    fail(ErrorCode::kConfig, "LM width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (ff_width == 0 || max_len < 2) fail(ErrorCode::kConfig, "LM feed-forward width and max length must be positive");
}

std::string LMConfig::to_json() const {
  nlohmann::json j{{"vocab", vocab},       {"layers", layers},   {"heads", heads}, {"width", width},
                   {"ff_width", ff_width}, {"max_len", max_len}, {"seed", seed}};
  return j.dump();
}

LMConfig LMConfig::from_json(const std::string& text) {
  LMConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.vocab = j.at("vocab");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.width = j.at("width");
    c.ff_width = j.at("ff_width");
    c.max_len = j.at("max_len");
    c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad LM config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Tensor> LMWeights::parameters() const {
  std::vector<Tensor> p{token_embedding, position_embedding};
  for (const auto& b : blocks) b.collect(p);
  final_norm.collect(p);
  p.push_back(unembedding);
  return p;
}

LMWeights init_lm(const LMConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  LMWeights w;
  w.config = config;
  w.token_embedding = num::normal_init<float>({config.vocab, config.width}, 0.02, rng);
  w.position_embedding = num::normal_init<float>({config.max_len, config.width}, 0.01, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    w.blocks.push_back(num::TransformerBlock<float>::make(config.width, config.ff_width, config.layers, rng));
  }
  w.final_norm = num::LayerNorm<float>::make(config.width);
  w.unembedding = num::normal_init<float>({config.vocab, config.width}, 0.02, rng);
  return w;
}

namespace {

void check_tokens(const LMConfig& c, std::span<const TokenId> tokens) {
  if (tokens.empty()) fail(ErrorCode::kLength, "empty token sequence");
  if (tokens.size() > c.max_len) {
    fail(ErrorCode::kLength, "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max length " +
                                 std::to_string(c.max_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab) {
      fail(ErrorCode::kToken, "token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(c.vocab));
    }
  }
}

// Runs embeddings and all blocks; the returned tensor is the last block's
// output before the final norm.
Tensor run_body(const LMWeights& w, std::span<const TokenId> tokens, const num::SequenceLayout& layout,
                num::BlockContext<float> ctx, std::vector<Tensor>* layer_out,
                std::vector<num::AttentionTap<float>>* taps) {
  std::vector<std::int32_t> pos(tokens.size());
  for (const auto& seg : layout) std::iota(pos.begin() + seg.offset, pos.begin() + seg.offset + seg.length, 0);
  Tensor x = num::add(num::embedding(w.token_embedding, tokens), num::embedding(w.position_embedding, pos));
  ctx.heads = w.config.heads;
  ctx.causal = true;
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    ctx.tap = taps != nullptr ? &(*taps)[l] : nullptr;
    x = w.blocks[l](x, layout, ctx);
    if (layer_out != nullptr) layer_out->push_back(x);
  }
  return x;
}

TokenId argmax_lowest(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

TraceRecord forward_with_trace(const LMWeights& w, std::span<const TokenId> tokens, std::size_t prompt_len) {
  const auto& c = w.config;
  check_tokens(c, tokens);
  if (prompt_len == 0 || prompt_len > tokens.size()) {
    fail(ErrorCode::kLength, "prompt length " + std::to_string(prompt_len) + " outside 1.." + std::to_string(tokens.size()));
  }
  num::NoGradGuard no_grad;
  const std::size_t S = tokens.size();
  std::vector<Tensor> layers;
  std::vector<num::AttentionTap<float>> taps(c.layers);
  Tensor x = run_body(w, tokens, num::single_sequence(S), {}, &layers, &taps);
  Tensor final_h = w.final_norm(x);
  layers.back() = final_h;

  TraceRecord t;
  t.layers = c.layers;
  t.heads = c.heads;
  t.width = c.width;
  t.vocab = c.vocab;
  t.prompt_len = prompt_len;
  t.tokens.assign(tokens.begin(), tokens.end());
  t.hidden.reserve(c.layers * S * c.width);
  t.attention.reserve(c.layers * c.heads * S * S);
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto h = layers[l].data();
    t.hidden.insert(t.hidden.end(), h.begin(), h.end());
    t.attention.insert(t.attention.end(), taps[l][0].begin(), taps[l][0].end());
  }
  if (S > prompt_len) {
    std::vector<std::size_t> rows(S - prompt_len);
    std::iota(rows.begin(), rows.end(), prompt_len - 1);
    Tensor logits = num::matmul_bt(num::gather_rows(final_h, rows), w.unembedding);
    t.logits.assign(logits.data().begin(), logits.data().end());
  }
  return t;
}

std::vector<float> next_token_logits(const LMWeights& w, std::span<const TokenId> tokens) {
  check_tokens(w.config, tokens);
  num::NoGradGuard no_grad;
  Tensor x = run_body(w, tokens, num::single_sequence(tokens.size()), {}, nullptr, nullptr);
  const std::size_t last = tokens.size() - 1;
  Tensor logits = num::matmul_bt(w.final_norm(num::gather_rows(x, std::span(&last, 1))), w.unembedding);
  return {logits.data().begin(), logits.data().end()};
}

std::vector<TokenId> generate_tokens(const LMWeights& w, std::span<const TokenId> prompt, std::size_t max_new,
                                     TokenId eos) {
  if (prompt.empty()) fail(ErrorCode::kLength, "generation needs a non-empty prompt");
  check_tokens(w.config, prompt);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t k = 0; k < max_new && seq.size() < w.config.max_len; ++k) {
    TokenId next = argmax_lowest(next_token_logits(w, seq));
    seq.push_back(next);
    if (next == eos) break;
  }
  return seq;
}

Generation generate_greedy(const LMWeights& w, std::span<const TokenId> prompt, std::size_t max_new, TokenId eos) {
  Generation g;
  g.tokens = generate_tokens(w, prompt, max_new, eos);
  g.prompt_len = prompt.size();
  g.trace = forward_with_trace(w, g.tokens, g.prompt_len);
  return g;
}

std::vector<float> layer_logits(const LMWeights& w, const TraceRecord& trace, std::size_t layer,
                                std::size_t row_begin, std::size_t row_end) {
  if (layer >= trace.layers) {
    fail(ErrorCode::kIndex, "layer " + std::to_string(layer) + " outside 0.." + std::to_string(trace.layers - 1));
  }
  if (row_begin > row_end || row_end > trace.seq_len()) fail(ErrorCode::kIndex, "layer_logits: row range out of bounds");
  if (trace.width != w.config.width || trace.vocab != w.config.vocab) {
    fail(ErrorCode::kCompatibility, "trace does not match the LM configuration");
  }
  num::NoGradGuard no_grad;
  const std::size_t d = trace.width;
  const std::size_t rows = row_end - row_begin;
  if (rows == 0) return {};
  auto first = trace.hidden_state(layer, row_begin);
  Tensor h = Tensor::from({rows, d}, std::vector<float>(first.data(), first.data() + rows * d));
  Tensor z = num::matmul_bt(h, w.unembedding);
  return {z.data().begin(), z.data().end()};
}

std::vector<float> layer_logits(const LMWeights& w, const TraceRecord& trace, std::size_t layer) {
  return layer_logits(w, trace, layer, 0, trace.seq_len());
}

double mean_nll(const LMWeights& w, std::span<const TokenId> tokens, std::size_t from) {
  check_tokens(w.config, tokens);
  if (from == 0 || from >= tokens.size()) fail(ErrorCode::kIndex, "mean_nll: start position outside the sequence");
  num::NoGradGuard no_grad;
  Tensor x = w.final_norm(run_body(w, tokens, num::single_sequence(tokens.size()), {}, nullptr, nullptr));
  Tensor logits = num::matmul_bt(x, w.unembedding);
  const std::size_t V = w.config.vocab;
  auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = from; i < tokens.size(); ++i) {
    const float* row = z.data() + (i - 1) * V;
    double mx = *std::max_element(row, row + V);
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += std::exp(row[k] - mx);
    total += mx + std::log(s) - row[tokens[i]];
  }
  return total / static_cast<double>(tokens.size() - from);
}

LMTrainResult train_lm(const LMConfig& config, const std::vector<std::vector<TokenId>>& corpus,
                       const LMTrainOptions& options) {
  if (corpus.empty()) fail(ErrorCode::kConfig, "empty training corpus");
  if (options.epochs == 0 || options.batch_tokens == 0) fail(ErrorCode::kConfig, "epochs and batch size must be positive");
  LMTrainResult result{init_lm(config), {}};
  auto& w = result.weights;

  std::vector<std::vector<TokenId>> docs;
  for (const auto& d : corpus) {
    if (d.size() < 2) continue;
    const std::size_t len = std::min(d.size(), config.max_len);
    check_tokens(config, std::span(d.data(), len));
    docs.emplace_back(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(len));
  }
  if (docs.empty()) fail(ErrorCode::kConfig, "training corpus has no document of 2+ tokens");

  // Fix every epoch's batches up front so the schedule knows its length.
  std::mt19937_64 rng(options.seed);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> epoch_end;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> cur;
    std::size_t tokens = 0;
    for (std::size_t idx : order) {
      cur.push_back(idx);
      tokens += docs[idx].size();
      if (tokens >= options.batch_tokens) {
        batches.push_back(std::move(cur));
        cur.clear();
        tokens = 0;
      }
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    epoch_end.push_back(batches.size());
  }

  auto adam = options.adam;
  adam.total_steps = batches.size();
  auto params = w.parameters();
  auto state = num::make_optimizer_state(params, adam);

  std::size_t epoch = 0, epoch_start = 0;
  for (std::size_t step = 0; step < batches.size(); ++step) {
    std::vector<TokenId> ids;
    std::vector<std::int32_t> targets;
    num::SequenceLayout layout;
    for (std::size_t idx : batches[step]) {
      const auto& d = docs[idx];
      layout.push_back({ids.size(), d.size()});
      ids.insert(ids.end(), d.begin(), d.end());
      targets.insert(targets.end(), d.begin() + 1, d.end());
      targets.push_back(-1);
    }
    Tensor x = w.final_norm(run_body(w, ids, layout, {}, nullptr, nullptr));
    Tensor loss;
    try {
      loss = num::cross_entropy(num::matmul_bt(x, w.unembedding), targets);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumericInput) throw;
      fail(ErrorCode::kDivergence, "LM training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const double value = loss.item();
    if (!std::isfinite(value)) fail(ErrorCode::kDivergence, "LM training loss is not finite at step " + std::to_string(step));
    result.loss_curve.push_back({step, value});
    for (auto& p : params) p.zero_grad();
    loss.backward();
    num::adam_step(params, state);
    if (step + 1 == epoch_end[epoch]) {
      if (options.on_epoch) {
        double sum = 0;
        for (std::size_t s = epoch_start; s <= step; ++s) sum += result.loss_curve[s].loss;
        options.on_epoch(epoch + 1, sum / static_cast<double>(step + 1 - epoch_start));
      }
      epoch_start = step + 1;
      ++epoch;
    }
  }
  return result;
}

void save_lm(const std::filesystem::path& path, const LMWeights& w) {
  std::vector<float> flat;
  for (const auto& p : w.parameters()) flat.insert(flat.end(), p.data().begin(), p.data().end());
  write_container(path, "UQL1", w.config.to_json(), flat);
}

LMWeights load_lm(const std::filesystem::path& path) {
  auto c = read_container(path, "UQL1");
  LMWeights w = init_lm(LMConfig::from_json(c.config));
  auto params = w.parameters();
  if (num::parameter_count(params) != c.payload.size()) {
    fail(ErrorCode::kFormat, path.string() + ": parameter payload does not match its config");
  }
  std::size_t off = 0;
  for (auto& p : params) {
    auto d = p.data();
    std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(off), d.size(), d.begin());
    off += d.size();
  }
  return w;
}

}  // namespace uq::lm
