#include "uq/eval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "uq/common/error.hpp"
#include "uq/common/random.hpp"
#include "uq/eval/metrics.hpp"
#include "uq/features/store.hpp"

namespace uq::eval {

AttentionSample attention_sample(const std::vector<const data::GenerationRecord*>& generations, std::size_t offset) {
  AttentionSample s;
  s.offset = offset;
  for (const auto* g : generations) {
    const auto& t = g->trace;
    if (t.tokens.empty()) fail(ErrorCode::kFormat, fmt::format("generation {} was loaded without its trace", g->id));
    if (s.layers == 0) {
      s.layers = t.layers;
      s.heads = t.heads;
    } else if (s.layers != t.layers || s.heads != t.heads) {
      fail(ErrorCode::kCompatibility, "traces come from different model shapes");
    }
    std::vector<double> inside(t.seq_len(), 0.0);
    for (const auto& c : g->claims)
      if (c.positive())
        for (auto p : c.positions) inside[p] = 1.0;
    for (std::size_t i = std::max(t.prompt_len, offset); i < t.seq_len(); ++i) {
      for (std::size_t l = 0; l < t.layers; ++l)
        for (std::size_t q = 0; q < t.heads; ++q) s.values.push_back(t.attn(l, q, i, i - offset));
      s.labels.push_back(inside[i]);
    }
  }
  return s;
}

namespace {

void require_both_labels(const AttentionSample& s) {
  const double pos = std::accumulate(s.labels.begin(), s.labels.end(), 0.0);
  if (s.labels.empty() || pos == 0.0 || pos == static_cast<double>(s.labels.size())) {
    fail(ErrorCode::kMetric, fmt::format("attention correlation needs both token labels; got {} positive of {}",
                                         pos, s.labels.size()));
  }
}

std::vector<double> column(const AttentionSample& s, std::size_t c) {
  const std::size_t w = s.layers * s.heads;
  std::vector<double> out(s.rows());
  for (std::size_t r = 0; r < s.rows(); ++r) out[r] = s.values[r * w + c];
  return out;
}

}  // namespace

std::vector<CorrelationCell> correlate(const AttentionSample& s) {
  require_both_labels(s);
  std::vector<CorrelationCell> out;
  for (std::size_t l = 0; l < s.layers; ++l) {
    for (std::size_t q = 0; q < s.heads; ++q) {
      CorrelationCell c{s.offset, l, q, 0.0, false};
      c.rho = pearson(column(s, l * s.heads + q), s.labels, &c.degenerate);
      out.push_back(c);
    }
  }
  return out;
}

CorrelationTable attention_correlation(const std::vector<const data::GenerationRecord*>& generations,
                                       const std::vector<std::size_t>& offsets) {
  if (offsets.empty()) fail(ErrorCode::kConfig, "no attention offsets requested");
  CorrelationTable t;
  t.offsets = offsets;
  for (auto j : offsets) {
    if (j == 0) fail(ErrorCode::kConfig, "attention offsets start at 1");
    const auto s = attention_sample(generations, j);
    const auto cells = correlate(s);
    double mx = 0.0;
    for (const auto& c : cells) mx = std::max(mx, std::abs(c.rho));
    t.max_abs.push_back(mx);
    t.cells.insert(t.cells.end(), cells.begin(), cells.end());
    if (j == offsets.front()) {
      t.tokens = s.rows();
      t.positive_rate = std::accumulate(s.labels.begin(), s.labels.end(), 0.0) / static_cast<double>(s.rows());
    }
  }
  return t;
}

PermutationNull permutation_null(const AttentionSample& s, std::size_t permutations, std::uint64_t seed,
                                 double quantile) {
  require_both_labels(s);
  if (permutations == 0 || !(quantile > 0.0 && quantile < 1.0)) {
    fail(ErrorCode::kConfig, "permutation null needs permutations > 0 and a quantile in (0,1)");
  }
  // Standardize columns once; rho is then the mean of z_x * z_y.
  const std::size_t n = s.rows(), w = s.layers * s.heads;
  std::vector<std::vector<double>> z;
  std::vector<double> observed_abs;
  for (std::size_t c = 0; c < w; ++c) {
    auto col = column(s, c);
    bool degenerate = false;
    observed_abs.push_back(std::abs(pearson(col, s.labels, &degenerate)));
    if (degenerate) continue;
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var);
    for (auto& v : col) v = (v - mean) * inv;
    z.push_back(std::move(col));
  }
  auto y = s.labels;
  const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double yv = 0.0;
  for (double v : y) yv += (v - ym) * (v - ym);
  for (auto& v : y) v = (v - ym) / std::sqrt(yv);

  std::mt19937_64 rng(seed);
  std::vector<double> maxima;
  for (std::size_t p = 0; p < permutations; ++p) {
    shuffle_in_place(y, rng);
    double mx = 0.0;
    for (const auto& col : z) {
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) dot += col[r] * y[r];
      mx = std::max(mx, std::abs(dot));
    }
    maxima.push_back(mx);
  }
  std::sort(maxima.begin(), maxima.end());
  // Nearest-rank quantile.
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(permutations)));
  PermutationNull out;
  out.permutations = permutations;
  out.quantile = quantile;
  out.percentile = maxima[std::max<std::size_t>(rank, 1) - 1];
  for (double a : observed_abs) {
    out.observed = std::max(out.observed, a);
    out.cells_above += static_cast<std::size_t>(a > out.percentile);
  }
  return out;
}

std::string correlation_csv(const CorrelationTable& t) {
  std::string out = "offset,layer,head,rho,degenerate\n";
  for (const auto& c : t.cells) {
    out += fmt::format("{},{},{},{:.6f},{}\n", c.offset, c.layer, c.head, c.rho, c.degenerate ? 1 : 0);
  }
  return out;
}

std::vector<SweepPoint> sweep_window(const data::Dataset& dataset, const lm::LMWeights& weights,
                                     const std::vector<std::size_t>& ks, const feat::FeatureSpec& base_spec,
                                     const head::UQHeadConfig& config, const head::HeadTrainOptions& options,
                                     std::size_t jobs) {
  if (ks.empty()) fail(ErrorCode::kConfig, "window sweep needs at least one k");
  for (auto k : ks)
    if (k < 1 || k > 10) fail(ErrorCode::kConfig, fmt::format("window size {} outside 1..10", k));
  if (!base_spec.enabled(feat::Family::kAttWindow)) {
    fail(ErrorCode::kConfig, "window sweep needs the att_window family in the feature spec");
  }
  const auto train = head::claim_examples(dataset, "train");
  const auto val = head::claim_examples(dataset, "val");
  std::vector<SweepPoint> out;
  for (auto k : ks) {
    auto spec = base_spec;
    spec.window = k;
    const auto mats = feat::extract_dataset(dataset, spec, weights, jobs);
    const auto r = head::train_head(mats, train, val, spec, weights.config, config, options);
    out.push_back({k, r.report.best_val_pr_auc, r.report.best_epoch});
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "k,val_pr_auc,best_epoch\n";
  for (const auto& p : points) out += fmt::format("{},{:.6f},{}\n", p.k, p.val_pr_auc, p.best_epoch);
  return out;
}

}  // namespace uq::eval
