#include "uq/baselines/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"
#include "uq/common/random.hpp"
#include "uq/eval/metrics.hpp"
#include "uq/toylm/checkpoint.hpp"

namespace uq::base {

using nlohmann::json;

void write_scores(const std::filesystem::path& path, const std::vector<ClaimScore>& scores) {
  std::string out;
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) {
      fail(ErrorCode::kNumericInput, s.method + " produced a non-finite score for claim " +
                                         std::to_string(s.generation) + ":" + std::to_string(s.claim));
    }
    out += json{{"generation", s.generation}, {"claim", s.claim}, {"method", s.method}, {"score", s.score}}.dump() + "\n";
  }
  write_text_file(path, out);
}

std::vector<ClaimScore> read_scores(const std::filesystem::path& path) {
  std::vector<ClaimScore> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("generation"), j.at("claim"), j.at("method"), j.at("score")});
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, path.string() + ": " + e.what());
    }
  }
  return out;
}

namespace {

void check_span(const lm::TraceRecord& trace, std::span<const std::size_t> positions) {
  if (positions.empty()) fail(ErrorCode::kClaim, "claim span is empty");
  for (auto p : positions) {
    if (p < trace.prompt_len || p >= trace.seq_len()) {
      fail(ErrorCode::kClaim, "claim position " + std::to_string(p) + " outside the generated tokens");
    }
  }
}

// Log-softmax of the distribution that produced position pos.
std::vector<double> log_probs(const lm::TraceRecord& trace, std::size_t pos) {
  auto z = trace.logits_for(pos);
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (float v : z) s += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> lp(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) lp[t] = std::min(0.0, static_cast<double>(z[t]) - lse);
  return lp;
}

double token_log_prob(const lm::TraceRecord& trace, std::size_t pos) {
  return log_probs(trace, pos)[static_cast<std::size_t>(trace.tokens[pos])];
}

void require_both_classes(const std::vector<head::ClaimExample>& ex) {
  std::size_t pos = 0;
  for (const auto& e : ex) pos += static_cast<std::size_t>(e.label == 1);
  if (pos == 0 || pos == ex.size()) {
    fail(ErrorCode::kDegenerateData, "training claims are single-class (" + std::to_string(pos) + " unsupported of " +
                                         std::to_string(ex.size()) + ")");
  }
}

std::vector<int> labels_of(const std::vector<head::ClaimExample>& ex) {
  std::vector<int> y;
  for (const auto& e : ex) y.push_back(e.label);
  return y;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double mcp(const lm::TraceRecord& trace, std::span<const std::size_t> positions) {
  check_span(trace, positions);
  double log_p = 0.0;
  for (auto p : positions) log_p += token_log_prob(trace, p);
  return -std::expm1(log_p);
}

double perplexity_score(const lm::TraceRecord& trace, std::span<const std::size_t> positions) {
  check_span(trace, positions);
  double log_p = 0.0;
  for (auto p : positions) log_p += token_log_prob(trace, p);
  return std::exp(-log_p / static_cast<double>(positions.size()));
}

double mean_token_entropy(const lm::TraceRecord& trace, std::span<const std::size_t> positions) {
  check_span(trace, positions);
  double total = 0.0;
  for (auto p : positions) {
    double h = 0.0;
    for (double lp : log_probs(trace, p)) h -= std::exp(lp) * lp;
    total += std::max(0.0, h);
  }
  return total / static_cast<double>(positions.size());
}

// --- SAPLMA ----------------------------------------------------------------

feat::FeatureSpec SaplmaConfig::spec(const lm::LMConfig& lm) const {
  auto s = feat::FeatureSpec::only(feat::Family::kHidden);
  // Middle layer counted from 1, i.e. 0-based L/2 - 1.
  s.layers = {layer == SIZE_MAX ? std::max<std::size_t>(lm.layers / 2, 1) - 1 : layer};
  return s;
}

std::vector<num::Tensor> Saplma::parameters() const {
  std::vector<num::Tensor> p;
  l1.collect(p);
  l2.collect(p);
  l3.collect(p);
  return p;
}

namespace {

num::Tensor saplma_forward(const Saplma& m, const num::Tensor& x) {
  return num::sigmoid(m.l3(num::gelu(m.l2(num::gelu(m.l1(x))))));
}

}  // namespace

std::vector<double> Saplma::token_scores(const feat::FeatureMatrix& features) const {
  if (features.fingerprint != fingerprint) {
    fail(ErrorCode::kCompatibility, "SAPLMA expects features '" + fingerprint + "', got '" + features.fingerprint + "'");
  }
  auto copy = features;
  norm.apply(copy);
  if (copy.rows == 0) return {};
  num::NoGradGuard guard;
  auto out = saplma_forward(*this, num::Tensor::from({copy.rows, copy.dim}, copy.values));
  return {out.data().begin(), out.data().end()};
}

double saplma_score(const Saplma& model, const feat::FeatureMatrix& features, std::span<const std::size_t> rows) {
  if (rows.empty()) fail(ErrorCode::kClaim, "claim span is empty");
  const auto s = model.token_scores(features);
  double total = 0.0;
  for (auto r : rows) {
    if (r >= s.size()) fail(ErrorCode::kClaim, "claim position outside the generation");
    total += s[r];
  }
  return total / static_cast<double>(rows.size());
}

std::vector<double> saplma_scores(const Saplma& model, const std::vector<feat::FeatureMatrix>& matrices,
                                  const std::vector<head::ClaimExample>& examples) {
  std::map<std::size_t, std::vector<double>> cache;
  std::vector<double> out;
  for (const auto& e : examples) {
    auto it = cache.find(e.matrix);
    if (it == cache.end()) it = cache.emplace(e.matrix, model.token_scores(matrices.at(e.matrix))).first;
    if (e.rows.empty()) fail(ErrorCode::kClaim, "claim span is empty");
    double total = 0.0;
    for (auto r : e.rows) total += it->second.at(r);
    out.push_back(total / static_cast<double>(e.rows.size()));
  }
  return out;
}

Saplma saplma_train(const std::vector<feat::FeatureMatrix>& matrices, const std::vector<head::ClaimExample>& train,
                    const lm::LMConfig& lm, const SaplmaConfig& config) {
  require_both_classes(train);
  const auto spec = config.spec(lm);
  spec.validate(lm);
  if (config.hidden == 0 || config.epochs == 0 || config.batch_tokens == 0) {
    fail(ErrorCode::kConfig, "SAPLMA width, epochs and batch size must be positive");
  }
  Saplma m;
  m.config = config;
  m.fingerprint = feat::fingerprint(spec, lm);
  const std::size_t d = feat::feature_dim(spec, lm);

  std::set<std::size_t> used;
  for (const auto& e : train) {
    used.insert(e.matrix);
    if (matrices.at(e.matrix).fingerprint != m.fingerprint) {
      fail(ErrorCode::kCompatibility, "SAPLMA training features do not match its layer spec");
    }
  }
  std::vector<const feat::FeatureMatrix*> fit_on;
  for (auto i : used) fit_on.push_back(&matrices[i]);
  m.norm = feat::NormStats::fit(fit_on);

  std::mt19937_64 init(config.seed);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_h = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  m.l1 = num::Linear<float>::make(d, config.hidden, s_in, init);
  m.l2 = num::Linear<float>::make(config.hidden, config.hidden, s_h, init);
  m.l3 = num::Linear<float>::make(config.hidden, 1, s_h, init);

  // Every generated token of the training generations; a token is positive
  // iff it falls inside one of the given unsupported claims.
  std::map<std::size_t, std::vector<float>> token_labels;
  for (auto i : used) token_labels[i].assign(matrices[i].rows, 0.0f);
  for (const auto& e : train) {
    auto& lab = token_labels[e.matrix];
    for (auto r : e.rows) {
      if (r >= lab.size()) fail(ErrorCode::kClaim, "claim position outside the generation");
      if (e.label == 1) lab[r] = 1.0f;
    }
  }
  std::vector<float> rows;
  std::vector<float> labels;
  for (const auto& [i, lab] : token_labels) {
    auto copy = matrices[i];
    m.norm.apply(copy);
    rows.insert(rows.end(), copy.values.begin(), copy.values.end());
    labels.insert(labels.end(), lab.begin(), lab.end());
  }
  const std::size_t n = labels.size();
  const std::size_t per_epoch = (n + config.batch_tokens - 1) / config.batch_tokens;
  auto adam = config.adam;
  adam.total_steps = per_epoch * config.epochs;
  auto params = m.parameters();
  auto state = num::make_optimizer_state(params, adam);
  std::mt19937_64 rng(config.seed + 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto train_labels = labels_of(train);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * config.batch_tokens;
      const std::size_t hi = std::min(n, lo + config.batch_tokens);
      std::vector<float> x, y;
      for (std::size_t k = lo; k < hi; ++k) {
        x.insert(x.end(), rows.begin() + static_cast<std::ptrdiff_t>(order[k] * d),
                 rows.begin() + static_cast<std::ptrdiff_t>((order[k] + 1) * d));
        y.push_back(labels[order[k]]);
      }
      auto scores = saplma_forward(m, num::Tensor::from({hi - lo, d}, std::move(x)));
      auto loss = num::bce_weighted(scores, std::span<const float>(y), 1.0f);
      if (!std::isfinite(loss.item())) fail(ErrorCode::kDivergence, "SAPLMA training loss is not finite");
      for (auto& p : params) p.zero_grad();
      loss.backward();
      num::adam_step(params, state);
    }
    if (config.stop_at_train <= 1.0 &&
        eval::pr_auc(saplma_scores(m, matrices, train), train_labels) >= config.stop_at_train) {
      break;
    }
  }
  return m;
}

// --- Lookback lens regression ------------------------------------------------

std::vector<double> claim_lookback_features(const feat::FeatureMatrix& lookback, std::span<const std::size_t> rows) {
  if (rows.empty()) fail(ErrorCode::kClaim, "claim span is empty");
  std::vector<double> f(lookback.dim, 0.0);
  for (auto r : rows) {
    if (r >= lookback.rows) fail(ErrorCode::kClaim, "claim position outside the generation");
    for (std::size_t c = 0; c < lookback.dim; ++c) f[c] += lookback.at(r, c);
  }
  for (auto& v : f) v /= static_cast<double>(rows.size());
  return f;
}

namespace {

double lookback_margin(const LookbackModel& m, const feat::FeatureMatrix& lookback, std::span<const std::size_t> rows) {
  if (lookback.fingerprint != m.fingerprint) {
    fail(ErrorCode::kCompatibility, "lookback model expects features '" + m.fingerprint + "'");
  }
  const auto f = claim_lookback_features(lookback, rows);
  if (f.size() != m.weights.size()) fail(ErrorCode::kDimension, "lookback feature width mismatch");
  double z = m.bias;
  for (std::size_t c = 0; c < f.size(); ++c) z += m.weights[c] * (f[c] - m.mean[c]) * m.inv_std[c];
  return z;
}

}  // namespace

LookbackModel lookback_train(const std::vector<feat::FeatureMatrix>& matrices,
                             const std::vector<head::ClaimExample>& train, const LookbackConfig& config) {
  require_both_classes(train);
  if (config.iterations == 0 || !(config.learning_rate > 0) || config.l2 < 0) {
    fail(ErrorCode::kConfig, "lookback regression needs iterations > 0, learning rate > 0 and l2 >= 0");
  }
  LookbackModel m;
  m.fingerprint = matrices.at(train.front().matrix).fingerprint;
  std::vector<std::vector<double>> x;
  for (const auto& e : train) {
    if (matrices.at(e.matrix).fingerprint != m.fingerprint) fail(ErrorCode::kCompatibility, "mixed lookback features");
    x.push_back(claim_lookback_features(matrices[e.matrix], e.rows));
  }
  const std::size_t n = x.size(), D = x.front().size();
  m.mean.assign(D, 0.0);
  m.inv_std.assign(D, 1.0);
  for (const auto& r : x)
    for (std::size_t c = 0; c < D; ++c) m.mean[c] += r[c] / static_cast<double>(n);
  for (std::size_t c = 0; c < D; ++c) {
    double v = 0.0;
    for (const auto& r : x) v += (r[c] - m.mean[c]) * (r[c] - m.mean[c]);
    const double sd = std::sqrt(v / static_cast<double>(n));
    m.inv_std[c] = sd > 1e-9 ? 1.0 / sd : 1.0;
  }
  for (auto& r : x)
    for (std::size_t c = 0; c < D; ++c) r[c] = (r[c] - m.mean[c]) * m.inv_std[c];

  m.weights.assign(D, 0.0);
  std::vector<double> grad(D);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = m.bias;
      for (std::size_t c = 0; c < D; ++c) z += m.weights[c] * x[i][c];
      const double err = sigmoid(z) - train[i].label;
      for (std::size_t c = 0; c < D; ++c) grad[c] += err * x[i][c];
      gb += err;
    }
    for (std::size_t c = 0; c < D; ++c) {
      m.weights[c] -= config.learning_rate * (grad[c] / static_cast<double>(n) + config.l2 * m.weights[c]);
    }
    m.bias -= config.learning_rate * gb / static_cast<double>(n);
  }
  return m;
}

double lookback_score(const LookbackModel& model, const feat::FeatureMatrix& lookback, std::span<const std::size_t> rows) {
  return sigmoid(lookback_margin(model, lookback, rows));
}

std::vector<double> lookback_margins(const LookbackModel& model, const std::vector<feat::FeatureMatrix>& matrices,
                                     const std::vector<head::ClaimExample>& examples) {
  std::vector<double> out;
  for (const auto& e : examples) out.push_back(lookback_margin(model, matrices.at(e.matrix), e.rows));
  return out;
}

std::vector<double> lookback_scores(const LookbackModel& model, const std::vector<feat::FeatureMatrix>& matrices,
                                    const std::vector<head::ClaimExample>& examples) {
  auto out = lookback_margins(model, matrices, examples);
  for (auto& v : out) v = sigmoid(v);
  return out;
}

// --- Factoscope head ---------------------------------------------------------

feat::FeatureSpec factoscope_spec(std::size_t top_m) {
  feat::FeatureSpec s;
  s.families = {feat::Family::kHidden, feat::Family::kFactoscopeLogits, feat::Family::kFactoscopeSim,
                feat::Family::kFactoscopeRank};
  s.top_m = top_m;
  return s;
}

head::HeadTrainResult factoscope_head(const std::vector<feat::FeatureMatrix>& matrices,
                                      const std::vector<head::ClaimExample>& train,
                                      const std::vector<head::ClaimExample>& val, const lm::LMConfig& lm,
                                      const head::UQHeadConfig& config, const head::HeadTrainOptions& options,
                                      std::size_t top_m) {
  return head::train_head(matrices, train, val, factoscope_spec(top_m), lm, config, options);
}

// --- checkpoints ---------------------------------------------------------------

void save_saplma(const std::filesystem::path& path, const Saplma& m) {
  json j{{"layer", m.config.layer == SIZE_MAX ? json(nullptr) : json(m.config.layer)},
         {"hidden", m.config.hidden},
         {"fingerprint", m.fingerprint},
         {"norm_width", m.norm.mean.size()},
         {"input_dim", m.l1.weight.dim(0)}};
  auto flat = m.norm.flat();
  for (const auto& p : m.parameters()) flat.insert(flat.end(), p.data().begin(), p.data().end());
  lm::write_container(path, "UQS1", j.dump(), flat);
}

Saplma load_saplma(const std::filesystem::path& path) {
  auto c = lm::read_container(path, "UQS1");
  Saplma m;
  std::size_t norm_width = 0, d = 0;
  try {
    const auto j = json::parse(c.config);
    m.config.layer = j.at("layer").is_null() ? SIZE_MAX : j.at("layer").get<std::size_t>();
    m.config.hidden = j.at("hidden");
    m.fingerprint = j.at("fingerprint");
    norm_width = j.at("norm_width");
    d = j.at("input_dim");
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  std::mt19937_64 rng(0);
  m.l1 = num::Linear<float>::make(d, m.config.hidden, 0.0, rng);
  m.l2 = num::Linear<float>::make(m.config.hidden, m.config.hidden, 0.0, rng);
  m.l3 = num::Linear<float>::make(m.config.hidden, 1, 0.0, rng);
  auto params = m.parameters();
  if (2 * norm_width + num::parameter_count(params) != c.payload.size()) {
    fail(ErrorCode::kFormat, path.string() + ": payload does not match the SAPLMA config");
  }
  m.norm = feat::NormStats::from_flat(std::span<const float>(c.payload.data(), 2 * norm_width));
  std::size_t off = 2 * norm_width;
  for (auto& p : params) {
    auto dst = p.data();
    std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
  return m;
}

void save_lookback(const std::filesystem::path& path, const LookbackModel& m) {
  json j{{"fingerprint", m.fingerprint}, {"mean", m.mean}, {"inv_std", m.inv_std}, {"weights", m.weights}, {"bias", m.bias}};
  lm::write_container(path, "UQB1", j.dump(), {});
}

LookbackModel load_lookback(const std::filesystem::path& path) {
  auto c = lm::read_container(path, "UQB1");
  LookbackModel m;
  try {
    const auto j = json::parse(c.config);
    m.fingerprint = j.at("fingerprint");
    m.mean = j.at("mean").get<std::vector<double>>();
    m.inv_std = j.at("inv_std").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias");
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace uq::base
