#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradient_suite.hpp"
#include "uq/common/error.hpp"
#include "uq/numerics/nn.hpp"
#include "uq/numerics/ops.hpp"
#include "uq/numerics/optim.hpp"

namespace uq::num {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an uq::Error";
  return ErrorCode::kIo;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {3.5f, -1, 2, 7});
  auto out = matmul(eye, m);
  EXPECT_EQ(std::vector<float>(out.data().begin(), out.data().end()), std::vector<float>({3.5f, -1, 2, 7}));
}

TEST(Matmul, SmallProduct) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {1, 1});
  auto out = matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_FLOAT_EQ(out.data()[0], 3);
  EXPECT_FLOAT_EQ(out.data()[1], 7);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x2]"), std::string::npos);
  }
}

TEST(Matmul, RowsAreIndependentOfBatchHeight) {
  std::mt19937_64 rng(7);
  std::normal_distribution<float> n(0, 1);
  const std::size_t M = 13, K = 37, N = 83;
  std::vector<float> av(M * K), bv(K * N);
  for (auto& x : av) x = n(rng);
  for (auto& x : bv) x = n(rng);
  auto a = Tensor::from({M, K}, av);
  auto b = Tensor::from({K, N}, bv);
  auto full = matmul(a, b);
  for (std::size_t i = 0; i < M; ++i) {
    auto row = Tensor::from({1, K}, std::vector<float>(av.begin() + i * K, av.begin() + (i + 1) * K));
    auto single = matmul(row, b);
    for (std::size_t j = 0; j < N; ++j) ASSERT_EQ(single.data()[j], full.data()[i * N + j]) << i << "," << j;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTranspose) {
  auto a = Tensor64::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = Tensor64::from({3, 2}, {0.5, -1, 2, 0.25, -3, 1}, true);
  sum(matmul(a, b)).backward();
  // d/dA_ik sum_ij (AB)_ij = sum_j B_kj
  const std::vector<double> row_sums{-0.5, 2.25, -2};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(a.grad()[i * 3 + k], row_sums[k]);
}

TEST(Softmax, UniformInput) {
  auto out = softmax(Tensor::from({4}, {2, 2, 2, 2}), 0);
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, LargeGapDoesNotOverflow) {
  auto out = softmax(Tensor::from({2}, {1000, 900}), 0);
  EXPECT_NEAR(out.data()[0], 1.0f, 1e-6);
  EXPECT_NEAR(out.data()[1], 0.0f, 1e-6);
  EXPECT_TRUE(std::isfinite(out.data()[1]));
}

TEST(Softmax, LogThreeGivesQuarterAndThreeQuarters) {
  auto out = softmax(Tensor64::from({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(out.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(out.data()[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneAlongEveryAxis) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-30, 30);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s{1 + rng() % 4, 1 + rng() % 5, 1 + rng() % 3};
    std::vector<float> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    const std::size_t axis = rng() % 3;
    auto out = softmax(Tensor::from(s, v), axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= s[i];
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        double total = 0;
        for (std::size_t k = 0; k < s[axis]; ++k) {
          const float p = out.data()[(a * s[axis] + k) * inner + b];
          EXPECT_GE(p, 0.0f);
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Softmax, RejectsNonFiniteInputAndBadAxis) {
  EXPECT_EQ(code_of([] { softmax(Tensor::from({2}, {1, NAN}), 0); }), ErrorCode::kNumericInput);
  EXPECT_EQ(code_of([] { softmax(Tensor::from({2}, {1, 2}), 1); }), ErrorCode::kDimension);
}

TEST(Gelu, ZeroAndAsymptote) {
  auto out = gelu(Tensor64::from({2}, {0.0, 12.0}));
  EXPECT_EQ(out.data()[0], 0.0);
  EXPECT_NEAR(out.data()[1], 12.0, 1e-9);
}

TEST(Gelu, MatchesTanhFormulaAtOne) {
  const double expected = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (1.0 + 0.044715)));
  auto out = gelu(Tensor::from({1}, {1.0f}));
  EXPECT_NEAR(out.data()[0], expected, 1e-6);
  EXPECT_NEAR(gelu(Tensor64::from({1}, {1.0})).data()[0], expected, 1e-15);
}

TEST(BceWeighted, HalfScorePositiveIsLogTwo) {
  auto loss = bce_weighted<double>(Tensor64::from({1}, {0.5}), std::vector<double>{1.0}, 1.0);
  EXPECT_NEAR(loss.item(), std::log(2.0), 1e-12);
}

TEST(BceWeighted, PerfectScoresAreNearZero) {
  auto loss = bce_weighted<float>(Tensor::from({2}, {1.0f, 0.0f}), std::vector<float>{1, 0}, 1.0f);
  EXPECT_NEAR(loss.item(), 0.0, 1e-6);
}

TEST(BceWeighted, WeightScalesPositiveOnlyBatchLinearly) {
  auto s = Tensor64::from({3}, {0.2, 0.6, 0.9});
  std::vector<double> y{1, 1, 1};
  const double one = bce_weighted<double>(s, y, 1.0).item();
  const double two = bce_weighted<double>(s, y, 2.0).item();
  EXPECT_NEAR(two, 2.0 * one, 1e-12);
}

TEST(BceWeighted, RejectsNonBinaryLabels) {
  EXPECT_EQ(code_of([] { bce_weighted<float>(Tensor::from({1}, {0.3f}), std::vector<float>{0.5f}, 1.0f); }),
            ErrorCode::kLabel);
}

TEST(Adam, ZeroGradientWithoutDecayLeavesParameters) {
  std::vector<Tensor> params{Tensor::from({3}, {1, -2, 3}, true)};
  AdamConfig cfg{.peak_lr = 0.1, .warmup_fraction = 0.0, .total_steps = 5, .weight_decay = 0.0};
  auto state = make_optimizer_state(params, cfg);
  for (int i = 0; i < 3; ++i) adam_step(params, state);
  EXPECT_EQ(std::vector<float>(params[0].data().begin(), params[0].data().end()), std::vector<float>({1, -2, 3}));
  EXPECT_EQ(state.step, 3u);
}

TEST(Adam, SingleScalarStepMatchesHandFormula) {
  const double w0 = 0.7, g = -0.3, lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<Tensor64> params{Tensor64::from({1}, {w0}, true)};
  params[0].grad()[0] = g;
  AdamConfig cfg{.peak_lr = lr, .warmup_fraction = 0.0, .total_steps = 10, .weight_decay = wd};
  auto state = make_optimizer_state(params, cfg);
  adam_step(params, state);
  // step 0 of a 10-step schedule without warmup runs at the peak rate
  const double m_hat = (1 - b1) * g / (1 - b1);
  const double v_hat = (1 - b2) * g * g / (1 - b2);
  const double expected = w0 * (1 - lr * wd) - lr * m_hat / (std::sqrt(v_hat) + eps);
  EXPECT_NEAR(params[0].data()[0], expected, 1e-15);
}

TEST(Adam, IdenticalParametersReceiveIdenticalUpdates) {
  std::vector<Tensor> params{Tensor::from({2}, {0.5f, 0.5f}, true), Tensor::from({2}, {0.5f, 0.5f}, true)};
  AdamConfig cfg{.peak_lr = 0.05, .warmup_fraction = 0.2, .total_steps = 20, .weight_decay = 0.01};
  auto state = make_optimizer_state(params, cfg);
  for (int s = 0; s < 10; ++s) {
    for (auto& p : params) {
      p.grad()[0] = 0.1f * static_cast<float>(s);
      p.grad()[1] = -0.2f;
    }
    adam_step(params, state);
  }
  EXPECT_EQ(params[0].data()[0], params[1].data()[0]);
  EXPECT_EQ(params[0].data()[1], params[1].data()[1]);
}

TEST(Adam, NanGradientIsDivergence) {
  std::vector<Tensor> params{Tensor::from({1}, {1}, true)};
  params[0].grad()[0] = NAN;
  auto state = make_optimizer_state(params, AdamConfig{.total_steps = 3});
  EXPECT_EQ(code_of([&] { adam_step(params, state); }), ErrorCode::kDivergence);
}

TEST(Schedule, WarmupPeakEndAndDecayMidpoint) {
  AdamConfig cfg{.peak_lr = 2e-4, .warmup_fraction = 0.1, .total_steps = 100};
  EXPECT_EQ(warmup_steps(cfg), 10u);
  EXPECT_DOUBLE_EQ(lr_at(10, cfg), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, cfg), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(55, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(5, cfg), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.0);
}

TEST(Schedule, RejectsWarmupOutsideUnitInterval) {
  AdamConfig cfg{.warmup_fraction = 1.5};
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::kConfig);
}

TEST(Attention, RowsSumToOneAndRespectMask) {
  std::mt19937_64 rng(3);
  const std::size_t heads = 2, width = 8, len = 6;
  auto qkv = normal_init<float>({len, 3 * width}, 1.0, rng);
  AttentionTap<float> tap;
  attention(qkv, single_sequence(len), heads, true, &tap);
  ASSERT_EQ(tap.size(), 1u);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const float p = tap[0][(h * len + i) * len + j];
        if (j > i) {
          EXPECT_EQ(p, 0.0f);
        }
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto block = TransformerBlock<float>::make(16, 32, 2, rng);
    auto x = normal_init<float>({5, 16}, 1.0, rng);
    std::mt19937_64 drop_rng(5);
    BlockContext<float> ctx{.heads = 4, .causal = true, .dropout = 0.1, .training = true, .rng = &drop_rng};
    auto y = block(x, single_sequence(5), ctx);
    auto loss = sum(y);
    loss.backward();
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), block.qkv.weight.grad().begin(), block.qkv.weight.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(GradientSuite, EveryOpMatchesFiniteDifferences) {
  for (const auto& check : testing::run_gradient_suite(20, 2024)) {
    EXPECT_LT(check.max_relative_error, 1e-5) << check.op;
    EXPECT_EQ(check.instances, 20u);
  }
}

}  // namespace
}  // namespace uq::num
