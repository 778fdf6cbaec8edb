#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "error_code.hpp"
#include "gradcheck.hpp"
#include "subsets.hpp"
#include "tiny_pipeline.hpp"
#include "uq/common/io.hpp"
#include "uq/common/random.hpp"
#include "uq/eval/metrics.hpp"
#include "uq/features/store.hpp"
#include "uq/head/head.hpp"
#include "uq/head/tune.hpp"

namespace {

using namespace uq;
using namespace uq::head;
using uq::testing::code_of;

UQHeadConfig small_config(std::size_t D) {
  UQHeadConfig c;
  c.input_dim = D;
  c.reduction_width = 8;
  c.encoder_layers = 2;
  c.encoder_width = 8;
  c.encoder_heads = 2;
  c.classifier_hidden = 6;
  c.dropout = 0.0;
  c.max_len = 12;
  c.seed = 3;
  return c;
}

// A head over random raw features with identity normalization.
UQHead random_head(std::size_t D, std::uint64_t seed = 3) {
  UQHead h;
  h.config = small_config(D);
  h.config.seed = seed;
  h.fingerprint = "test";
  h.norm.mean.assign(D, 0.0f);
  h.norm.inv_std.assign(D, 1.0f);
  h.net = HeadNet<float>::make(h.config);
  return h;
}

feat::FeatureMatrix random_features(std::size_t rows, std::size_t D, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  feat::FeatureMatrix m;
  m.rows = rows;
  m.dim = D;
  m.fingerprint = "test";
  for (std::size_t i = 0; i < rows * D; ++i) m.values.push_back(g(rng));
  return m;
}

TEST(HeadConfig, Validation) {
  auto c = small_config(4);
  EXPECT_NO_THROW(c.validate());
  c.encoder_heads = 3;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  c = small_config(4);
  c.dropout = 1.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  c = small_config(0);
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::kConfig);
  auto d = small_config(7);
  d.positive_weight = 3.5;
  EXPECT_EQ(UQHeadConfig::from_json(d.to_json()), d);
}

TEST(HeadConfig, ParameterCountIsAnalytic) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    UQHeadConfig c;
    c.input_dim = 1 + rng() % 50;
    c.reduction_width = 1 + rng() % 20;
    c.encoder_heads = 1 + rng() % 4;
    c.encoder_width = c.encoder_heads * (1 + rng() % 6);
    c.encoder_layers = 1 + rng() % 3;
    c.classifier_hidden = 1 + rng() % 9;
    c.max_len = 1 + rng() % 40;
    auto net = HeadNet<float>::make(c);
    EXPECT_EQ(num::parameter_count(net.parameters()), c.parameter_count());
  }
}

TEST(Head, ScoresLieInUnitInterval) {
  auto h = random_head(5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto f = random_features(3 + s % 9, 5, s);
    std::vector<int> mask(f.rows, 0);
    mask[s % f.rows] = 1;
    const double p = head_forward(h, f, mask);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Head, MeanPoolingOfEqualVectorsIsThatVector) {
  auto x = num::Tensor::from({4, 3}, {1, 2, 3, 7, 7, 7, 1, 2, 3, 1, 2, 3});
  auto pooled = num::segment_mean(x, {{0, 2, 3}});
  EXPECT_EQ(std::vector<float>(pooled.data().begin(), pooled.data().end()), (std::vector<float>{1, 2, 3}));
}

TEST(Head, MembershipEmbeddingMatters) {
  auto h = random_head(5);
  int changed = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto f = random_features(8, 5, 100 + s);
    std::vector<int> mask(8, 0);
    mask[2] = mask[3] = 1;
    auto flipped = mask;
    flipped[6] = 1;
    changed += head_forward(h, f, mask) != head_forward(h, f, flipped);
  }
  EXPECT_EQ(changed, 20);
}

TEST(Head, ErrorsOnEmptyClaimsAndForeignFeatures) {
  auto h = random_head(5);
  auto f = random_features(4, 5, 1);
  EXPECT_EQ(code_of([&] { head_forward(h, f, {0, 0, 0, 0}); }), ErrorCode::kClaim);
  EXPECT_EQ(code_of([&] { score_claims(h, f, {{}}); }), ErrorCode::kClaim);
  EXPECT_EQ(code_of([&] { score_claims(h, f, {{9}}); }), ErrorCode::kClaim);
  f.fingerprint = "other";
  EXPECT_EQ(code_of([&] { head_forward(h, f, {1, 0, 0, 0}); }), ErrorCode::kCompatibility);
  EXPECT_TRUE(score_claims(h, random_features(4, 5, 1), {}).empty());
}

TEST(Head, ClaimOrderDoesNotChangeScores) {
  auto h = random_head(5);
  auto f = random_features(11, 5, 9);
  std::vector<std::vector<std::size_t>> claims{{0, 1}, {3, 4, 5}, {7}, {8, 9, 10}};
  auto a = score_claims(h, f, claims);
  std::vector<std::vector<std::size_t>> rev(claims.rbegin(), claims.rend());
  auto b = score_claims(h, f, rev);
  for (std::size_t k = 0; k < claims.size(); ++k) EXPECT_EQ(a[k], b[claims.size() - 1 - k]);
  // Scoring alone gives the same value as scoring in a batch.
  EXPECT_EQ(score_claims(h, f, {claims[2]}).front(), a[2]);
}

TEST(Head, CropWindowCentresOnClaim) {
  EXPECT_EQ(crop_window(10, {3}, 12), (std::pair<std::size_t, std::size_t>{0, 10}));
  EXPECT_EQ(crop_window(100, {50, 51, 52}, 10), (std::pair<std::size_t, std::size_t>{46, 56}));
  EXPECT_EQ(crop_window(100, {1}, 10), (std::pair<std::size_t, std::size_t>{0, 10}));
  EXPECT_EQ(crop_window(100, {98, 99}, 10), (std::pair<std::size_t, std::size_t>{90, 100}));
  // Long generations are accepted and scored.
  auto h = random_head(5);
  auto f = random_features(40, 5, 4);
  auto s = score_claims(h, f, {{30, 31}, {0}});
  EXPECT_EQ(s.size(), 2u);
}

TEST(Head, GradientMatchesFiniteDifferencesInDouble) {
  auto c = small_config(4);
  c.max_len = 6;
  auto net = HeadNet<double>::make(c);
  auto params = net.parameters();
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g(0, 1);
  std::vector<std::vector<float>> storage(3);
  std::vector<ClaimInput> batch;
  const std::size_t lens[] = {5, 3, 6};
  for (int b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < lens[b] * 4; ++i) storage[b].push_back(g(rng));
    ClaimInput in;
    in.rows = lens[b];
    in.dim = 4;
    in.values = storage[b].data();
    in.claim_rows = b == 0 ? std::vector<std::size_t>{1, 2} : b == 1 ? std::vector<std::size_t>{0} : std::vector<std::size_t>{3, 4, 5};
    batch.push_back(in);
  }
  // Perturb the zero-initialized biases and norms so every parameter has a
  // non-trivial gradient path.
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& p : params)
    for (auto& v : p.data()) v += u(rng);
  const std::vector<double> labels{1, 0, 1};
  auto loss_fn = [&](std::vector<num::Tensor64>&) {
    return num::bce_weighted(net.forward(c, batch, false, nullptr), std::span<const double>(labels), 2.0);
  };
  const double err = uq::testing::gradcheck(params, loss_fn, 1e-5);
  EXPECT_LT(err, 1e-4);
}

// --- training on the tiny pipeline ------------------------------------------

struct Prepared {
  std::vector<feat::FeatureMatrix> mats;
  std::vector<ClaimExample> train, val, test;
};

const Prepared& prepared() {
  static const Prepared p = [] {
    const auto& tp = uq::testing::tiny_pipeline();
    Prepared out;
    out.mats = feat::extract_dataset(tp.dataset, feat::FeatureSpec{}, tp.lm, 1);
    out.train = claim_examples(tp.dataset, "train");
    out.val = claim_examples(tp.dataset, "val");
    out.test = claim_examples(tp.dataset, "test");
    return out;
  }();
  return p;
}

UQHeadConfig tiny_head_config() {
  UQHeadConfig c;
  c.reduction_width = 32;
  c.encoder_width = 32;
  c.classifier_hidden = 32;
  c.encoder_layers = 2;
  c.encoder_heads = 4;
  return c;
}

HeadTrainOptions tiny_options() {
  HeadTrainOptions o;
  o.epochs = 8;
  o.adam.peak_lr = 1e-3;
  return o;
}

double train_pr_auc(const UQHead& h, const std::vector<feat::FeatureMatrix>& mats, const std::vector<ClaimExample>& ex) {
  std::vector<int> labels;
  for (const auto& e : ex) labels.push_back(e.label);
  return eval::pr_auc(score_examples(h, mats, ex), labels);
}

TEST(HeadTraining, BeatsPrevalenceAndSeparatesMeans) {
  const auto& p = prepared();
  const auto& lm = uq::testing::tiny_pipeline().lm;
  auto r = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, lm.config, tiny_head_config(), tiny_options());
  ASSERT_GE(r.report.best_epoch, 1u);
  EXPECT_EQ(r.report.epochs.size(), 8u);
  EXPECT_DOUBLE_EQ(r.report.best_val_pr_auc, r.report.epochs[r.report.best_epoch - 1].val_pr_auc);
  // The returned head is the best epoch's.
  EXPECT_NEAR(train_pr_auc(r.head, p.mats, p.val), r.report.best_val_pr_auc, 1e-12);

  const auto scores = score_examples(r.head, p.mats, p.test);
  double pos = 0, neg = 0;
  std::size_t np = 0, nn = 0;
  std::vector<int> labels;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    labels.push_back(p.test[i].label);
    (p.test[i].label ? pos : neg) += scores[i];
    (p.test[i].label ? np : nn) += 1;
  }
  EXPECT_GT(pos / np, neg / nn);
  EXPECT_GT(eval::pr_auc(scores, labels), eval::prevalence(labels) + 0.15);
}

TEST(HeadTraining, PositiveWeightEntersLossInClosedForm) {
  const auto& p = prepared();
  const auto& lm = uq::testing::tiny_pipeline().lm;
  auto cfg = tiny_head_config();
  cfg.dropout = 0.0;
  auto opt = tiny_options();
  opt.epochs = 1;
  opt.batch_claims = 8;
  cfg.positive_weight = 1.0;
  auto one = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, lm.config, cfg, opt);
  cfg.positive_weight = 2.0;
  auto two = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, lm.config, cfg, opt);

  // Rebuild the first batch and the untrained head.
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(p.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);
  std::vector<ClaimExample> batch;
  for (std::size_t k = 0; k < 8; ++k) batch.push_back(p.train[order[k]]);
  UQHead init = one.head;
  init.config.input_dim = feat::feature_dim(feat::FeatureSpec{}, lm.config);
  init.net = HeadNet<float>::make(init.config);
  const auto s = score_examples(init, p.mats, batch);
  double l1 = 0, l2 = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    const double y = batch[k].label;
    const double sc = std::clamp(s[k], num::kBceEpsilon, 1 - num::kBceEpsilon);
    l1 += -(y * std::log(sc) + (1 - y) * std::log(1 - sc));
    l2 += -(2 * y * std::log(sc) + (1 - y) * std::log(1 - sc));
  }
  EXPECT_NEAR(one.report.first_batch_loss, l1 / 8, 1e-5);
  EXPECT_NEAR(two.report.first_batch_loss, l2 / 8, 1e-5);
}

TEST(HeadTraining, OverfitsFiftyClaimsAndWidthHelps) {
  const auto& p = prepared();
  const auto& lm = uq::testing::tiny_pipeline().lm;
  const auto subset = uq::testing::fifty_claims(p.train);
  ASSERT_EQ(subset.size(), 50u);
  double previous = 0.0;
  for (std::size_t width : {16, 64}) {
    auto cfg = tiny_head_config();
    cfg.encoder_width = cfg.reduction_width = cfg.classifier_hidden = width;
    cfg.dropout = 0.0;
    HeadTrainOptions opt;
    opt.epochs = 200;
    opt.batch_claims = 10;
    opt.adam.peak_lr = 1e-3;
    opt.adam.weight_decay = 0.0;
    opt.stop_at_val = 1.0;
    auto r = train_head(p.mats, subset, subset, feat::FeatureSpec{}, lm.config, cfg, opt);
    const double auc = train_pr_auc(r.head, p.mats, subset);
    EXPECT_GE(auc, previous) << "width " << width;
    previous = auc;
    if (width == 64) {
      EXPECT_EQ(auc, 1.0);
    }
  }
}

TEST(HeadTraining, DeterministicAndFrozenBody) {
  const auto& p = prepared();
  const auto& tp = uq::testing::tiny_pipeline();
  const auto lm_path = uq::testing::scratch_path("lm.uql");
  lm::save_lm(lm_path, tp.lm);
  const auto before = sha256_file(lm_path);
  auto opt = tiny_options();
  opt.epochs = 2;
  auto a = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, tp.lm.config, tiny_head_config(), opt);
  auto b = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, tp.lm.config, tiny_head_config(), opt);
  lm::save_lm(lm_path, tp.lm);
  EXPECT_EQ(sha256_file(lm_path), before);

  const auto pa = uq::testing::scratch_path("a.uqh");
  const auto pb = uq::testing::scratch_path("b.uqh");
  save_head(pa, a.head);
  save_head(pb, b.head);
  EXPECT_EQ(sha256_file(pa), sha256_file(pb));

  auto loaded = load_head(pa);
  EXPECT_EQ(loaded.config, a.head.config);
  EXPECT_EQ(loaded.fingerprint, a.head.fingerprint);
  EXPECT_EQ(score_examples(loaded, p.mats, p.val), score_examples(a.head, p.mats, p.val));
  EXPECT_EQ(code_of([&] { lm::load_lm(pa); }), ErrorCode::kFormat);
  for (const auto& f : {lm_path, pa, pb}) std::filesystem::remove(f);
}

TEST(HeadTraining, SingleClassSplitIsDegenerate) {
  const auto& p = prepared();
  const auto& lm = uq::testing::tiny_pipeline().lm;
  std::vector<ClaimExample> neg;
  for (const auto& e : p.train)
    if (!e.label) neg.push_back(e);
  EXPECT_EQ(code_of([&] { train_head(p.mats, neg, p.val, feat::FeatureSpec{}, lm.config, tiny_head_config(), tiny_options()); }),
            ErrorCode::kDegenerateData);
  EXPECT_EQ(code_of([&] { train_head(p.mats, p.train, neg, feat::FeatureSpec{}, lm.config, tiny_head_config(), tiny_options()); }),
            ErrorCode::kDegenerateData);
}

TEST(Predict, GeneratesExtractsAndScores) {
  const auto& p = prepared();
  const auto& tp = uq::testing::tiny_pipeline();
  auto opt = tiny_options();
  opt.epochs = 1;
  auto r = train_head(p.mats, p.train, p.val, feat::FeatureSpec{}, tp.lm.config, tiny_head_config(), opt);
  const auto& e = tp.world.entity(tp.prompts.front().entity);
  auto a = predict_claims(tp.lm, tp.tokenizer, r.head, data::prompt_text(e), 40);
  auto b = predict_claims(tp.lm, tp.tokenizer, r.head, data::prompt_text(e), 40);
  ASSERT_FALSE(a.claims.empty());
  ASSERT_EQ(a.claims.size(), b.claims.size());
  for (std::size_t k = 0; k < a.claims.size(); ++k) {
    EXPECT_EQ(a.claims[k].score, b.claims[k].score);
    EXPECT_EQ(a.claims[k].claim.positions, b.claims[k].claim.positions);
  }
  // The dataset generation for the same prompt gets the same scores.
  const auto& g = tp.dataset.generations.front();
  EXPECT_EQ(a.tokens, g.tokens);
  auto zero = predict_claims(tp.lm, tp.tokenizer, r.head, data::prompt_text(e), 0);
  EXPECT_TRUE(zero.claims.empty());
  auto wrong = r.head;
  wrong.fingerprint = "0000";
  EXPECT_EQ(code_of([&] { predict_claims(tp.lm, tp.tokenizer, wrong, "Tell me a bio of E1.", 5); }),
            ErrorCode::kCompatibility);
}

TEST(Tune, SamplesInsideTheGrid) {
  const auto& tp = uq::testing::tiny_pipeline();
  SearchSpace space;
  space.learning_rates = {5e-4, 1e-2};
  space.min_epochs = 2;
  space.max_epochs = 3;
  space.windows = {1, 3};
  auto r = tune_hyperparameters(tp.dataset, tp.lm, feat::FeatureSpec{}, tiny_head_config(), tiny_options(), space, 3, 4, 1);
  ASSERT_EQ(r.trials.size(), 3u);
  double best = -1;
  for (const auto& t : r.trials) {
    EXPECT_TRUE(t.learning_rate == 5e-4 || t.learning_rate == 1e-2);
    EXPECT_TRUE(t.window == 1 || t.window == 3);
    EXPECT_TRUE(t.epochs >= 2 && t.epochs <= 3);
    EXPECT_GE(t.val_pr_auc, 0.0);
    EXPECT_LE(t.val_pr_auc, 1.0);
    best = std::max(best, t.val_pr_auc);
  }
  EXPECT_EQ(r.best.val_pr_auc, best);
  const auto log = uq::testing::scratch_path("trials.csv");
  write_trial_log(log, r);
  EXPECT_EQ(read_lines(log).size(), 4u);
  std::filesystem::remove(log);

  auto one = tune_hyperparameters(tp.dataset, tp.lm, feat::FeatureSpec{}, tiny_head_config(), tiny_options(), space, 1, 4, 1);
  ASSERT_EQ(one.trials.size(), 1u);
  EXPECT_EQ(one.best.index, 0u);
  EXPECT_EQ(one.best.learning_rate, r.trials[0].learning_rate);
}

TEST(Tune, RejectsZeroBudgetAndOffGridValues) {
  const auto& tp = uq::testing::tiny_pipeline();
  SearchSpace space;
  EXPECT_EQ(code_of([&] { tune_hyperparameters(tp.dataset, tp.lm, {}, tiny_head_config(), tiny_options(), space, 0, 1, 1); }),
            ErrorCode::kConfig);
  space.learning_rates = {3e-3};
  EXPECT_EQ(code_of([&] { space.validate(); }), ErrorCode::kConfig);
  space = SearchSpace{};
  space.max_epochs = 20;
  EXPECT_EQ(code_of([&] { space.validate(); }), ErrorCode::kConfig);
}

}  // namespace
