#include "uq/head/head.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "uq/common/error.hpp"
#include "uq/common/random.hpp"
#include "uq/eval/metrics.hpp"
#include "uq/toylm/checkpoint.hpp"

namespace uq::head {

using num::BasicTensor;

void UQHeadConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, "head config: " + what); };
  if (input_dim == 0) bad("input dimension is 0");
  if (reduction_width == 0 || encoder_width == 0 || classifier_hidden == 0) bad("widths must be positive");
  if (encoder_layers == 0) bad("need at least one encoder layer");
  if (encoder_heads == 0 || encoder_width % encoder_heads != 0) bad("encoder width must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (max_len == 0) bad("max_len must be positive");
  if (!(positive_weight > 0.0)) bad("positive weight must be > 0");
}

std::string UQHeadConfig::to_json() const {
  nlohmann::json j{{"input_dim", input_dim},
                   {"reduction_width", reduction_width},
                   {"encoder_layers", encoder_layers},
                   {"encoder_width", encoder_width},
                   {"encoder_heads", encoder_heads},
                   {"classifier_hidden", classifier_hidden},
                   {"dropout", dropout},
                   {"max_len", max_len},
                   {"positive_weight", positive_weight},
                   {"seed", seed}};
  return j.dump();
}

UQHeadConfig UQHeadConfig::from_json(const std::string& text) {
  UQHeadConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.reduction_width = j.value("reduction_width", c.reduction_width);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.encoder_width = j.value("encoder_width", c.encoder_width);
    c.encoder_heads = j.value("encoder_heads", c.encoder_heads);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.max_len = j.value("max_len", c.max_len);
    c.positive_weight = j.value("positive_weight", c.positive_weight);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("head config: ") + e.what());
  }
  return c;
}

std::size_t UQHeadConfig::parameter_count() const {
  const std::size_t D = input_dim, R = reduction_width, W = encoder_width, H = classifier_hidden;
  const std::size_t block = 2 * W                  // ln1
                            + W * 3 * W + 3 * W    // qkv
                            + W * W + W            // proj
                            + 2 * W                // ln2
                            + W * 4 * W + 4 * W    // fc
                            + 4 * W * W + W;       // out
  return (D * R + R) + (R * W + W) + 2 * W + max_len * W + encoder_layers * block + 2 * W + (W * H + H) + (H + 1);
}

template <typename T>
HeadNet<T> HeadNet<T>::make(const UQHeadConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  auto fan = [](std::size_t in) { return 1.0 / std::sqrt(static_cast<double>(in)); };
  HeadNet<T> n;
  n.reduce1 = num::Linear<T>::make(c.input_dim, c.reduction_width, fan(c.input_dim), rng);
  n.reduce2 = num::Linear<T>::make(c.reduction_width, c.encoder_width, fan(c.reduction_width), rng);
  n.claim_embedding = num::normal_init<T>({2, c.encoder_width}, 0.1, rng);
  n.position_embedding = num::normal_init<T>({c.max_len, c.encoder_width}, 0.02, rng);
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    n.encoder.push_back(num::TransformerBlock<T>::make(c.encoder_width, 4 * c.encoder_width, c.encoder_layers, rng));
  }
  n.final_norm = num::LayerNorm<T>::make(c.encoder_width);
  n.cls1 = num::Linear<T>::make(c.encoder_width, c.classifier_hidden, fan(c.encoder_width), rng);
  n.cls2 = num::Linear<T>::make(c.classifier_hidden, 1, fan(c.classifier_hidden), rng);
  return n;
}

template <typename T>
std::vector<BasicTensor<T>> HeadNet<T>::parameters() const {
  std::vector<BasicTensor<T>> p;
  reduce1.collect(p);
  reduce2.collect(p);
  p.push_back(claim_embedding);
  p.push_back(position_embedding);
  for (const auto& b : encoder) b.collect(p);
  final_norm.collect(p);
  cls1.collect(p);
  cls2.collect(p);
  return p;
}

template <typename T>
BasicTensor<T> HeadNet<T>::forward(const UQHeadConfig& c, const std::vector<ClaimInput>& batch, bool training,
                                   std::mt19937_64* rng) const {
  if (batch.empty()) fail(ErrorCode::kClaim, "empty claim batch");
  std::size_t total = 0;
  for (const auto& b : batch) {
    if (b.dim != c.input_dim) {
      fail(ErrorCode::kDimension, "head expects feature width " + std::to_string(c.input_dim) + ", got " +
                                      std::to_string(b.dim));
    }
    if (b.rows > c.max_len) fail(ErrorCode::kLength, "claim input longer than the head's max_len");
    if (b.claim_rows.empty()) fail(ErrorCode::kClaim, "claim with no token positions");
    total += b.rows;
  }
  std::vector<T> x;
  x.reserve(total * c.input_dim);
  std::vector<std::int32_t> member, position;
  num::SequenceLayout layout;
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& b : batch) {
    const std::size_t base = member.size();
    layout.push_back({base, b.rows});
    for (std::size_t i = 0; i < b.rows * b.dim; ++i) x.push_back(static_cast<T>(b.values[i]));
    std::vector<std::int32_t> m(b.rows, 0);
    std::vector<std::size_t> g;
    for (auto r : b.claim_rows) {
      m.at(r) = 1;
      g.push_back(base + r);
    }
    member.insert(member.end(), m.begin(), m.end());
    for (std::size_t r = 0; r < b.rows; ++r) position.push_back(static_cast<std::int32_t>(r));
    groups.push_back(std::move(g));
  }
  const bool drop = training && rng != nullptr && c.dropout > 0.0;
  auto dropout = [&](const BasicTensor<T>& t) { return drop ? num::dropout(t, c.dropout, *rng, true) : t; };

  auto input = BasicTensor<T>::from({total, c.input_dim}, std::move(x));
  auto h = reduce2(dropout(num::gelu(reduce1(input))));
  h = num::add(h, num::embedding(claim_embedding, member));
  h = num::add(h, num::embedding(position_embedding, position));
  num::BlockContext<T> ctx{c.encoder_heads, false, drop ? c.dropout : 0.0, drop, drop ? rng : nullptr, nullptr};
  for (const auto& block : encoder) h = block(h, layout, ctx);
  h = final_norm(h);
  auto pooled = num::segment_mean(h, groups);
  auto logit = cls2(dropout(num::gelu(cls1(pooled))));
  return num::sigmoid(logit);
}

template struct HeadNet<float>;
template struct HeadNet<double>;

std::pair<std::size_t, std::size_t> crop_window(std::size_t rows, const std::vector<std::size_t>& claim_rows,
                                                std::size_t max_len) {
  if (rows <= max_len) return {0, rows};
  if (claim_rows.empty()) fail(ErrorCode::kClaim, "claim with no token positions");
  const auto [lo, hi] = std::minmax_element(claim_rows.begin(), claim_rows.end());
  const std::size_t centre = (*lo + *hi) / 2;
  std::size_t begin = centre > max_len / 2 ? centre - max_len / 2 : 0;
  begin = std::min(begin, rows - max_len);
  return {begin, begin + max_len};
}

namespace {

ClaimInput make_input(const feat::FeatureMatrix& normalized, const std::vector<std::size_t>& rows, std::size_t max_len) {
  for (auto r : rows) {
    if (r >= normalized.rows) fail(ErrorCode::kClaim, "claim position outside the generation");
  }
  const auto [begin, end] = crop_window(normalized.rows, rows, max_len);
  ClaimInput in;
  in.rows = end - begin;
  in.dim = normalized.dim;
  in.values = normalized.values.data() + begin * normalized.dim;
  for (auto r : rows)
    if (r >= begin && r < end) in.claim_rows.push_back(r - begin);
  return in;
}

void check_features(const UQHead& head, const feat::FeatureMatrix& f) {
  if (f.fingerprint != head.fingerprint) {
    fail(ErrorCode::kCompatibility, "features with fingerprint '" + f.fingerprint + "' given to a head trained on '" +
                                        head.fingerprint + "'");
  }
}

feat::FeatureMatrix normalized_copy(const feat::NormStats& norm, const feat::FeatureMatrix& f) {
  auto copy = f;
  norm.apply(copy);
  return copy;
}

std::vector<double> to_double(const num::Tensor& t) { return {t.data().begin(), t.data().end()}; }

void require_both_classes(const std::vector<ClaimExample>& ex, const std::string& split) {
  std::size_t pos = 0;
  for (const auto& e : ex) pos += static_cast<std::size_t>(e.label == 1);
  if (pos == 0 || pos == ex.size()) {
    fail(ErrorCode::kDegenerateData, split + " claims are single-class (" + std::to_string(pos) + " unsupported of " +
                                         std::to_string(ex.size()) + ")");
  }
}

}  // namespace

std::vector<double> score_claims(const UQHead& head, const feat::FeatureMatrix& features,
                                 const std::vector<std::vector<std::size_t>>& claims) {
  check_features(head, features);
  if (claims.empty()) return {};
  const auto norm = normalized_copy(head.norm, features);
  std::vector<ClaimInput> batch;
  for (const auto& rows : claims) {
    if (rows.empty()) fail(ErrorCode::kClaim, "claim with no token positions");
    batch.push_back(make_input(norm, rows, head.config.max_len));
  }
  num::NoGradGuard guard;
  return to_double(head.net.forward(head.config, batch, false, nullptr));
}

double head_forward(const UQHead& head, const feat::FeatureMatrix& features, const std::vector<int>& claim_mask) {
  if (claim_mask.size() != features.rows) fail(ErrorCode::kClaim, "claim mask length differs from the generation");
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < claim_mask.size(); ++r)
    if (claim_mask[r]) rows.push_back(r);
  if (rows.empty()) fail(ErrorCode::kClaim, "claim mask selects no token");
  return score_claims(head, features, {rows}).front();
}

std::vector<ClaimExample> claim_examples(const data::Dataset& dataset, const std::string& split) {
  std::vector<ClaimExample> out;
  for (std::size_t g = 0; g < dataset.generations.size(); ++g) {
    const auto& gen = dataset.generations[g];
    if (gen.split != split) continue;
    for (const auto& c : gen.claims) {
      if (!c.labeled()) continue;
      ClaimExample e;
      e.matrix = g;
      for (auto p : c.positions) e.rows.push_back(p - gen.prompt_len);
      e.label = c.positive() ? 1 : 0;
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<double> score_examples(const UQHead& head, const std::vector<feat::FeatureMatrix>& matrices,
                                   const std::vector<ClaimExample>& examples) {
  std::vector<double> out(examples.size());
  // Group by matrix so each generation is normalized once.
  std::map<std::size_t, std::vector<std::size_t>> by_matrix;
  for (std::size_t i = 0; i < examples.size(); ++i) by_matrix[examples[i].matrix].push_back(i);
  for (const auto& [m, idx] : by_matrix) {
    std::vector<std::vector<std::size_t>> claims;
    for (auto i : idx) claims.push_back(examples[i].rows);
    const auto s = score_claims(head, matrices.at(m), claims);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = s[k];
  }
  return out;
}

HeadTrainResult train_head(const std::vector<feat::FeatureMatrix>& matrices, const std::vector<ClaimExample>& train,
                           const std::vector<ClaimExample>& val, const feat::FeatureSpec& spec,
                           const lm::LMConfig& lm, UQHeadConfig config, const HeadTrainOptions& options) {
  spec.validate(lm);
  config.input_dim = feat::feature_dim(spec, lm);
  config.validate();
  if (options.epochs == 0 || options.batch_claims == 0) fail(ErrorCode::kConfig, "epochs and batch size must be positive");
  require_both_classes(train, "training");
  require_both_classes(val, "validation");

  HeadTrainResult result;
  auto& head = result.head;
  head.config = config;
  head.spec = spec;
  head.fingerprint = feat::fingerprint(spec, lm);
  for (const auto& e : train) check_features(head, matrices.at(e.matrix));
  for (const auto& e : val) check_features(head, matrices.at(e.matrix));

  std::vector<std::size_t> train_mats;
  for (const auto& e : train) train_mats.push_back(e.matrix);
  std::sort(train_mats.begin(), train_mats.end());
  train_mats.erase(std::unique(train_mats.begin(), train_mats.end()), train_mats.end());
  std::vector<const feat::FeatureMatrix*> fit_on;
  for (auto m : train_mats) fit_on.push_back(&matrices[m]);
  head.norm = feat::NormStats::fit(fit_on);
  head.net = HeadNet<float>::make(config);

  std::map<std::size_t, feat::FeatureMatrix> normalized;
  for (auto m : train_mats) normalized.emplace(m, normalized_copy(head.norm, matrices[m]));
  std::vector<ClaimInput> inputs;
  for (const auto& e : train) inputs.push_back(make_input(normalized.at(e.matrix), e.rows, config.max_len));

  const std::size_t per_epoch = (train.size() + options.batch_claims - 1) / options.batch_claims;
  auto adam = options.adam;
  adam.total_steps = per_epoch * options.epochs;
  auto params = head.net.parameters();
  auto state = num::make_optimizer_state(params, adam);
  std::mt19937_64 rng(options.seed);

  std::vector<std::vector<float>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
  };
  std::vector<int> val_labels;
  for (const auto& e : val) val_labels.push_back(e.label);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  bool first = true;
  result.report.best_val_pr_auc = -1.0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * options.batch_claims;
      const std::size_t hi = std::min(order.size(), lo + options.batch_claims);
      std::vector<ClaimInput> batch;
      std::vector<float> labels;
      for (std::size_t k = lo; k < hi; ++k) {
        batch.push_back(inputs[order[k]]);
        labels.push_back(static_cast<float>(train[order[k]].label));
      }
      auto scores = head.net.forward(config, batch, true, &rng);
      auto loss = num::bce_weighted(scores, std::span<const float>(labels), static_cast<float>(config.positive_weight));
      const double value = loss.item();
      if (!std::isfinite(value)) fail(ErrorCode::kDivergence, "head training loss is not finite in epoch " + std::to_string(epoch));
      if (first) {
        result.report.first_batch_loss = value;
        first = false;
      }
      loss_sum += value * static_cast<double>(hi - lo);
      for (auto& p : params) p.zero_grad();
      loss.backward();
      num::adam_step(params, state);
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = loss_sum / static_cast<double>(train.size());
    rep.val_pr_auc = eval::pr_auc(score_examples(head, matrices, val), val_labels);
    result.report.epochs.push_back(rep);
    if (rep.val_pr_auc > result.report.best_val_pr_auc) {
      result.report.best_val_pr_auc = rep.val_pr_auc;
      result.report.best_epoch = epoch;
      snapshot();
    }
    if (rep.val_pr_auc >= options.stop_at_val) break;
  }
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(best[k].begin(), best[k].end(), params[k].data().begin());
  return result;
}

void save_head(const std::filesystem::path& path, const UQHead& head) {
  nlohmann::json j{{"head", nlohmann::json::parse(head.config.to_json())},
                   {"spec", nlohmann::json::parse(head.spec.to_json())},
                   {"fingerprint", head.fingerprint},
                   {"norm_width", head.norm.mean.size()}};
  std::vector<float> flat = head.norm.flat();
  for (const auto& p : head.net.parameters()) flat.insert(flat.end(), p.data().begin(), p.data().end());
  lm::write_container(path, "UQH1", j.dump(), flat);
}

UQHead load_head(const std::filesystem::path& path) {
  auto c = lm::read_container(path, "UQH1");
  UQHead head;
  std::size_t norm_width = 0;
  try {
    const auto j = nlohmann::json::parse(c.config);
    head.config = UQHeadConfig::from_json(j.at("head").dump());
    head.spec = feat::FeatureSpec::from_json(j.at("spec").dump());
    head.fingerprint = j.at("fingerprint").get<std::string>();
    norm_width = j.at("norm_width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  head.net = HeadNet<float>::make(head.config);
  auto params = head.net.parameters();
  if (2 * norm_width + num::parameter_count(params) != c.payload.size()) {
    fail(ErrorCode::kFormat, path.string() + ": payload does not match the head config");
  }
  head.norm = feat::NormStats::from_flat(std::span<const float>(c.payload.data(), 2 * norm_width));
  std::size_t off = 2 * norm_width;
  for (auto& p : params) {
    auto d = p.data();
    std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(off), d.size(), d.begin());
    off += d.size();
  }
  return head;
}

Prediction predict_claims(const lm::LMWeights& weights, const lm::Tokenizer& tokenizer, const UQHead& head,
                          const std::string& prompt, std::size_t max_new) {
  if (feat::fingerprint(head.spec, weights.config) != head.fingerprint) {
    fail(ErrorCode::kCompatibility, "head was trained for a different LM or feature spec");
  }
  auto ids = tokenizer.encode(prompt);
  ids.insert(ids.begin(), lm::Tokenizer::kBos);
  auto gen = lm::generate_greedy(weights, ids, max_new);
  Prediction out;
  out.tokens = gen.tokens;
  out.prompt_len = gen.prompt_len;
  const auto claims = data::extract_claims(tokenizer, gen.tokens, gen.prompt_len);
  if (claims.empty()) return out;
  const auto features = feat::concat_features(gen.trace, head.spec, weights.config, &weights);
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& c : claims) {
    std::vector<std::size_t> r;
    for (auto p : c.positions) r.push_back(p - gen.prompt_len);
    rows.push_back(std::move(r));
  }
  const auto scores = score_claims(head, features, rows);
  for (std::size_t k = 0; k < claims.size(); ++k) out.claims.push_back({claims[k], scores[k]});
  return out;
}

}  // namespace uq::head
