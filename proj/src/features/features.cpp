#include "uq/features/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace uq::feat {

namespace {

constexpr const char* kNames[] = {"hidden",         "lookback",   "factoscope_logits", "factoscope_sim",
                                  "factoscope_rank", "att_window", "top_prob"};

// Log-probabilities below this are clamped; keeps one-hot rows finite.
constexpr double kLogFloor = -100.0;

FeatureMatrix blank(const lm::TraceRecord& trace, std::size_t dim) {
  FeatureMatrix m;
  m.rows = trace.gen_len();
  m.dim = dim;
  m.values.assign(m.rows * dim, 0.0f);
  return m;
}

void check_layers(const lm::TraceRecord& trace, const std::vector<std::size_t>& layers) {
  for (auto l : layers) {
    if (l >= trace.layers) fail(ErrorCode::kIndex, "feature layer " + std::to_string(l) + " outside the trace");
  }
}

void check_weights(const lm::TraceRecord& trace, const lm::LMWeights& w) {
  if (trace.width != w.config.width || trace.vocab != w.config.vocab || trace.layers != w.config.layers) {
    fail(ErrorCode::kCompatibility, "trace was not produced by these LM weights");
  }
}

// Layer logits for the rows that predict the generated tokens, i.e. absolute
// rows prompt_len-1 .. S-2.
std::vector<float> predicting_logits(const lm::LMWeights& w, const lm::TraceRecord& trace, std::size_t layer) {
  const std::size_t n = trace.prompt_len;
  return lm::layer_logits(w, trace, layer, n - 1, trace.seq_len() - 1);
}

}  // namespace

const char* family_name(Family family) { return kNames[static_cast<int>(family)]; }

Family family_from_name(const std::string& name) {
  for (auto f : kFamilyOrder)
    if (name == family_name(f)) return f;
  fail(ErrorCode::kConfig, "unknown feature family '" + name + "'");
}

bool FeatureSpec::enabled(Family family) const {
  return std::find(families.begin(), families.end(), family) != families.end();
}

std::vector<Family> FeatureSpec::ordered() const {
  std::vector<Family> out;
  for (auto f : kFamilyOrder)
    if (enabled(f)) out.push_back(f);
  return out;
}

std::vector<std::size_t> FeatureSpec::layer_list(const lm::LMConfig& lm) const {
  if (!layers.empty()) return layers;
  std::vector<std::size_t> all(lm.layers);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

void FeatureSpec::validate(const lm::LMConfig& lm) const {
  if (families.empty()) fail(ErrorCode::kConfig, "feature spec enables no family");
  if (enabled(Family::kAttWindow) && window < 1) fail(ErrorCode::kConfig, "att_window needs k >= 1");
  const bool uses_m = enabled(Family::kTopProb) || enabled(Family::kFactoscopeLogits) || enabled(Family::kFactoscopeSim);
  if (uses_m && (top_m < 1 || (lm.vocab > 0 && top_m > lm.vocab))) {
    fail(ErrorCode::kConfig, "top-m must lie in 1..V, got " + std::to_string(top_m));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] >= lm.layers) fail(ErrorCode::kConfig, "feature layer " + std::to_string(layers[i]) + " >= L");
    if (std::count(layers.begin(), layers.end(), layers[i]) > 1) fail(ErrorCode::kConfig, "duplicate feature layer");
  }
  if (enabled(Family::kFactoscopeSim) && layer_list(lm).size() < 2) {
    fail(ErrorCode::kConfig, "factoscope_sim needs at least two layers");
  }
}

std::string FeatureSpec::to_json() const {
  nlohmann::json j;
  std::vector<std::string> names;
  for (auto f : ordered()) names.emplace_back(family_name(f));
  j["families"] = names;
  j["window"] = window;
  j["top_m"] = top_m;
  j["layers"] = layers;
  return j.dump();
}

FeatureSpec FeatureSpec::from_json(const std::string& text) {
  FeatureSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.families.clear();
    for (const auto& n : j.at("families")) s.families.push_back(family_from_name(n.get<std::string>()));
    s.window = j.value("window", s.window);
    s.top_m = j.value("top_m", s.top_m);
    s.layers = j.value("layers", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("feature spec: ") + e.what());
  }
  return s;
}

FeatureSpec FeatureSpec::only(Family family, std::size_t window, std::size_t top_m) {
  FeatureSpec s;
  s.families = {family};
  s.window = window;
  s.top_m = top_m;
  return s;
}

std::size_t family_dim(Family family, const FeatureSpec& spec, const lm::LMConfig& lm) {
  const std::size_t nl = spec.layer_list(lm).size();
  switch (family) {
    case Family::kHidden: return nl * lm.width;
    case Family::kLookback: return nl * lm.heads;
    case Family::kFactoscopeLogits: return nl * spec.top_m;
    case Family::kFactoscopeSim: return (nl - 1) * spec.top_m * spec.top_m;
    case Family::kFactoscopeRank: return nl;
    case Family::kAttWindow: return nl * lm.heads * spec.window;
    case Family::kTopProb: return spec.top_m;
  }
  return 0;
}

std::size_t feature_dim(const FeatureSpec& spec, const lm::LMConfig& lm) {
  std::size_t d = 0;
  for (auto f : spec.ordered()) d += family_dim(f, spec, lm);
  return d;
}

std::string fingerprint(const FeatureSpec& spec, const lm::LMConfig& lm) {
  return sha256_hex(spec.to_json() + "\n" + lm.to_json()).substr(0, 16);
}

std::vector<std::size_t> top_indices(std::span<const float> values, std::size_t m) {
  m = std::min(m, values.size());
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(m);
  return idx;
}

FeatureMatrix f_hidden(const lm::TraceRecord& trace, const std::vector<std::size_t>& layers) {
  check_layers(trace, layers);
  const std::size_t d = trace.width;
  auto m = blank(trace, layers.size() * d);
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto out = m.row(r);
    for (std::size_t b = 0; b < layers.size(); ++b) {
      auto h = trace.hidden_state(layers[b], trace.prompt_len + r);
      std::copy(h.begin(), h.end(), out.begin() + static_cast<std::ptrdiff_t>(b * d));
    }
  }
  return m;
}

FeatureMatrix lookback_ratio(const lm::TraceRecord& trace, const std::vector<std::size_t>& layers) {
  check_layers(trace, layers);
  const std::size_t Q = trace.heads;
  const std::size_t n = trace.prompt_len;
  auto m = blank(trace, layers.size() * Q);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const std::size_t i = n + r;
    auto out = m.row(r);
    for (std::size_t b = 0; b < layers.size(); ++b) {
      for (std::size_t q = 0; q < Q; ++q) {
        double ctx = 0.0, gen = 0.0;
        for (std::size_t j = 0; j < n; ++j) ctx += trace.attn(layers[b], q, i, j);
        for (std::size_t j = n; j < i; ++j) gen += trace.attn(layers[b], q, i, j);
        ctx /= static_cast<double>(n);
        if (i > n) gen /= static_cast<double>(i - n);
        const double denom = ctx + gen;
        out[b * Q + q] = denom > 0.0 ? static_cast<float>(ctx / denom) : 0.0f;
      }
    }
  }
  return m;
}

FeatureMatrix f_att(const lm::TraceRecord& trace, std::size_t k, const std::vector<std::size_t>& layers) {
  check_layers(trace, layers);
  const std::size_t Q = trace.heads;
  auto m = blank(trace, layers.size() * Q * k);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const std::size_t i = trace.prompt_len + r;
    auto out = m.row(r);
    std::size_t c = 0;
    for (auto l : layers) {
      for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t j = 1; j <= k; ++j, ++c) {
          if (j <= i) out[c] = trace.attn(l, q, i, i - j);
        }
      }
    }
  }
  return m;
}

FeatureMatrix f_prob(const lm::TraceRecord& trace, std::size_t m) {
  if (m < 1 || m > trace.vocab) fail(ErrorCode::kConfig, "top-m must lie in 1..V");
  auto out = blank(trace, m);
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto z = trace.logits_for(trace.prompt_len + r);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (float v : z) s += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(s);
    const auto top = top_indices(z, m);
    auto row = out.row(r);
    for (std::size_t t = 0; t < m; ++t) {
      const double lp = std::min(0.0, static_cast<double>(z[top[t]]) - lse);
      row[t] = static_cast<float>(std::max(kLogFloor, lp));
    }
  }
  return out;
}

FeatureMatrix factoscope_logits(const lm::TraceRecord& trace, const lm::LMWeights& weights, std::size_t m,
                                const std::vector<std::size_t>& layers) {
  check_weights(trace, weights);
  check_layers(trace, layers);
  if (m < 1 || m > trace.vocab) fail(ErrorCode::kConfig, "top-m must lie in 1..V");
  const std::size_t V = trace.vocab;
  auto out = blank(trace, layers.size() * m);
  for (std::size_t b = 0; b < layers.size(); ++b) {
    const auto z = predicting_logits(weights, trace, layers[b]);
    for (std::size_t r = 0; r < out.rows; ++r) {
      std::span<const float> zr(z.data() + r * V, V);
      const auto top = top_indices(zr, m);
      for (std::size_t t = 0; t < m; ++t) out.row(r)[b * m + t] = zr[top[t]];
    }
  }
  return out;
}

FeatureMatrix factoscope_sim(const lm::TraceRecord& trace, const lm::LMWeights& weights, std::size_t m,
                             const std::vector<std::size_t>& layers) {
  check_weights(trace, weights);
  check_layers(trace, layers);
  if (m < 1 || m > trace.vocab) fail(ErrorCode::kConfig, "top-m must lie in 1..V");
  if (layers.size() < 2) fail(ErrorCode::kConfig, "factoscope_sim needs at least two layers");
  const std::size_t V = trace.vocab;
  const std::size_t d = trace.width;
  const auto E = weights.unembedding.data();
  std::vector<double> norm(V);
  for (std::size_t t = 0; t < V; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(E[t * d + c]) * E[t * d + c];
    norm[t] = std::sqrt(s);
  }
  auto cosine = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(E[a * d + c]) * E[b * d + c];
    const double den = norm[a] * norm[b];
    return den > 0.0 ? std::clamp(s / den, -1.0, 1.0) : 0.0;
  };

  auto out = blank(trace, (layers.size() - 1) * m * m);
  // top[b][r] holds the top-m ids of layer block b at row r.
  std::vector<std::vector<std::vector<std::size_t>>> top(layers.size());
  for (std::size_t b = 0; b < layers.size(); ++b) {
    const auto z = predicting_logits(weights, trace, layers[b]);
    top[b].resize(out.rows);
    for (std::size_t r = 0; r < out.rows; ++r) top[b][r] = top_indices(std::span<const float>(z.data() + r * V, V), m);
  }
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    std::size_t c = 0;
    for (std::size_t b = 0; b + 1 < layers.size(); ++b)
      for (auto w1 : top[b][r])
        for (auto w2 : top[b + 1][r]) row[c++] = static_cast<float>(cosine(w1, w2));
  }
  return out;
}

FeatureMatrix factoscope_rank(const lm::TraceRecord& trace, const lm::LMWeights& weights,
                              const std::vector<std::size_t>& layers) {
  check_weights(trace, weights);
  check_layers(trace, layers);
  const std::size_t V = trace.vocab;
  auto out = blank(trace, layers.size());
  for (std::size_t b = 0; b < layers.size(); ++b) {
    const auto z = predicting_logits(weights, trace, layers[b]);
    for (std::size_t r = 0; r < out.rows; ++r) {
      const float* zr = z.data() + r * V;
      const auto tok = static_cast<std::size_t>(trace.tokens[trace.prompt_len + r]);
      std::size_t rank = 1;
      for (std::size_t t = 0; t < V; ++t) rank += zr[t] > zr[tok] || (zr[t] == zr[tok] && t < tok);
      out.row(r)[b] = 1.0f / static_cast<float>(rank);
    }
  }
  return out;
}

FeatureMatrix concat_features(const lm::TraceRecord& trace, const FeatureSpec& spec, const lm::LMConfig& lm,
                              const lm::LMWeights* weights) {
  spec.validate(lm);
  if (trace.layers != lm.layers || trace.heads != lm.heads || trace.width != lm.width || trace.vocab != lm.vocab) {
    fail(ErrorCode::kCompatibility, "trace does not match the LM configuration of the feature spec");
  }
  const auto layers = spec.layer_list(lm);
  const std::size_t D = feature_dim(spec, lm);
  auto out = blank(trace, D);
  out.fingerprint = fingerprint(spec, lm);
  std::size_t offset = 0;
  for (auto f : spec.ordered()) {
    const bool needs_weights =
        f == Family::kFactoscopeLogits || f == Family::kFactoscopeSim || f == Family::kFactoscopeRank;
    if (needs_weights && weights == nullptr) {
      fail(ErrorCode::kConfig, std::string(family_name(f)) + " needs the LM weights");
    }
    FeatureMatrix part;
    switch (f) {
      case Family::kHidden: part = f_hidden(trace, layers); break;
      case Family::kLookback: part = lookback_ratio(trace, layers); break;
      case Family::kFactoscopeLogits: part = factoscope_logits(trace, *weights, spec.top_m, layers); break;
      case Family::kFactoscopeSim: part = factoscope_sim(trace, *weights, spec.top_m, layers); break;
      case Family::kFactoscopeRank: part = factoscope_rank(trace, *weights, layers); break;
      case Family::kAttWindow: part = f_att(trace, spec.window, layers); break;
      case Family::kTopProb: part = f_prob(trace, spec.top_m); break;
    }
    for (std::size_t r = 0; r < out.rows; ++r) {
      auto src = part.row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += part.dim;
  }
  return out;
}

NormStats NormStats::fit(const std::vector<const FeatureMatrix*>& matrices) {
  NormStats s;
  if (matrices.empty()) return s;
  const std::size_t D = matrices.front()->dim;
  std::vector<double> sum(D, 0.0), sq(D, 0.0);
  std::size_t n = 0;
  for (const auto* m : matrices) {
    if (m->dim != D) fail(ErrorCode::kDimension, "feature matrices differ in width");
    for (std::size_t r = 0; r < m->rows; ++r) {
      auto row = m->row(r);
      for (std::size_t c = 0; c < D; ++c) sum[c] += row[c];
    }
    n += m->rows;
  }
  if (n == 0) fail(ErrorCode::kDegenerateData, "no feature rows to fit normalization on");
  s.mean.resize(D);
  for (std::size_t c = 0; c < D; ++c) s.mean[c] = static_cast<float>(sum[c] / static_cast<double>(n));
  // Two-pass variance keeps constant columns exactly constant.
  for (const auto* m : matrices)
    for (std::size_t r = 0; r < m->rows; ++r) {
      auto row = m->row(r);
      for (std::size_t c = 0; c < D; ++c) {
        const double dv = row[c] - static_cast<double>(s.mean[c]);
        sq[c] += dv * dv;
      }
    }
  s.inv_std.resize(D);
  for (std::size_t c = 0; c < D; ++c) {
    const double sd = std::sqrt(sq[c] / static_cast<double>(n));
    s.inv_std[c] = sd > 1e-6 ? static_cast<float>(1.0 / sd) : 1.0f;
  }
  return s;
}

void NormStats::apply(FeatureMatrix& m) const {
  if (m.dim != mean.size()) {
    fail(ErrorCode::kDimension, "normalization expects width " + std::to_string(mean.size()) + ", got " +
                                    std::to_string(m.dim));
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.dim; ++c) row[c] = (row[c] - mean[c]) * inv_std[c];
  }
}

std::vector<float> NormStats::flat() const {
  std::vector<float> v(mean);
  v.insert(v.end(), inv_std.begin(), inv_std.end());
  return v;
}

NormStats NormStats::from_flat(std::span<const float> values) {
  if (values.size() % 2 != 0) fail(ErrorCode::kFormat, "normalization block has odd length");
  const std::size_t D = values.size() / 2;
  NormStats s;
  s.mean.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(D));
  s.inv_std.assign(values.begin() + static_cast<std::ptrdiff_t>(D), values.end());
  return s;
}

}  // namespace uq::feat
