#include "gradient_suite.hpp"

#include <random>

#include "gradcheck.hpp"
#include "uq/numerics/ops.hpp"

namespace uq::testing {

namespace {

using num::Tensor64;

Tensor64 random_tensor(num::Shape shape, std::mt19937_64& rng, bool grad, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(num::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor64::from(std::move(shape), std::move(v), grad);
}

// Rows with std >= 0.3. Near-constant rows make layer norm so curved that the
// h = 1e-3 central difference, not the analytic gradient, is the inaccurate side.
Tensor64 spread_rows(std::size_t M, std::size_t N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(M * N);
  for (std::size_t r = 0; r < M; ++r) {
    double var = 0;
    do {
      double mean = 0;
      for (std::size_t c = 0; c < N; ++c) mean += v[r * N + c] = u(rng);
      mean /= static_cast<double>(N);
      var = 0;
      for (std::size_t c = 0; c < N; ++c) var += (v[r * N + c] - mean) * (v[r * N + c] - mean);
      var /= static_cast<double>(N);
    } while (var < 0.09);
  }
  return Tensor64::from({M, N}, std::move(v), true);
}

// Contracts an op output with fixed random weights so every output element
// contributes a distinct gradient.
Tensor64 contract(const Tensor64& y, const Tensor64& w) { return num::sum(num::mul(y, w)); }

struct Case {
  std::string name;
  // Builds inputs and the loss closure for one random instance.
  std::function<double(std::mt19937_64&)> run;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back({"matmul", [](std::mt19937_64& rng) {
                 const std::size_t M = pick(rng, 1, 4), K = pick(rng, 1, 5), N = pick(rng, 1, 4);
                 std::vector<Tensor64> in{random_tensor({M, K}, rng, true), random_tensor({K, N}, rng, true)};
                 auto w = random_tensor({M, N}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::matmul(x[0], x[1]), w); });
               }});
  c.push_back({"matmul_bt", [](std::mt19937_64& rng) {
                 const std::size_t M = pick(rng, 1, 4), K = pick(rng, 1, 5), N = pick(rng, 1, 4);
                 std::vector<Tensor64> in{random_tensor({M, K}, rng, true), random_tensor({N, K}, rng, true)};
                 auto w = random_tensor({M, N}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::matmul_bt(x[0], x[1]), w); });
               }});
  c.push_back({"add", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
                 std::vector<Tensor64> in{random_tensor(s, rng, true), random_tensor(s, rng, true)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::add(x[0], x[1]), w); });
               }});
  c.push_back({"mul", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
                 std::vector<Tensor64> in{random_tensor(s, rng, true), random_tensor(s, rng, true)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::mul(x[0], x[1]), w); });
               }});
  c.push_back({"scale", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
                 std::vector<Tensor64> in{random_tensor(s, rng, true)};
                 auto w = random_tensor(s, rng, false);
                 const double f = std::uniform_real_distribution<double>(-2, 2)(rng);
                 return gradcheck(in, [&](auto& x) { return contract(num::scale(x[0], f), w); });
               }});
  c.push_back({"add_bias", [](std::mt19937_64& rng) {
                 const std::size_t M = pick(rng, 1, 4), N = pick(rng, 1, 5);
                 std::vector<Tensor64> in{random_tensor({M, N}, rng, true), random_tensor({N}, rng, true)};
                 auto w = random_tensor({M, N}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::add_bias(x[0], x[1]), w); });
               }});
  c.push_back({"gelu", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
                 std::vector<Tensor64> in{random_tensor(s, rng, true, -3, 3)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::gelu(x[0]), w); });
               }});
  c.push_back({"sigmoid", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
                 std::vector<Tensor64> in{random_tensor(s, rng, true, -4, 4)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::sigmoid(x[0]), w); });
               }});
  c.push_back({"softmax", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 1, 3)};
                 const std::size_t axis = pick(rng, 0, 2);
                 std::vector<Tensor64> in{random_tensor(s, rng, true, -2, 2)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::softmax(x[0], axis), w); });
               }});
  c.push_back({"layer_norm", [](std::mt19937_64& rng) {
                 const std::size_t M = pick(rng, 1, 4), N = pick(rng, 2, 6);
                 std::vector<Tensor64> in{spread_rows(M, N, rng), random_tensor({N}, rng, true, 0.5, 1.5),
                                          random_tensor({N}, rng, true)};
                 auto w = random_tensor({M, N}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::layer_norm(x[0], x[1], x[2]), w); });
               }});
  c.push_back({"embedding", [](std::mt19937_64& rng) {
                 const std::size_t V = pick(rng, 2, 6), d = pick(rng, 1, 4), n = pick(rng, 1, 6);
                 std::vector<std::int32_t> ids(n);
                 for (auto& id : ids) id = static_cast<std::int32_t>(pick(rng, 0, V - 1));
                 std::vector<Tensor64> in{random_tensor({V, d}, rng, true)};
                 auto w = random_tensor({n, d}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::embedding(x[0], ids), w); });
               }});
  c.push_back({"gather_rows", [](std::mt19937_64& rng) {
                 const std::size_t N = pick(rng, 2, 6), d = pick(rng, 1, 4), n = pick(rng, 1, 6);
                 std::vector<std::size_t> rows(n);
                 for (auto& r : rows) r = pick(rng, 0, N - 1);
                 std::vector<Tensor64> in{random_tensor({N, d}, rng, true)};
                 auto w = random_tensor({n, d}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::gather_rows(x[0], rows), w); });
               }});
  c.push_back({"dropout", [](std::mt19937_64& rng) {
                 const num::Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
                 const std::uint64_t seed = rng();
                 std::vector<Tensor64> in{random_tensor(s, rng, true)};
                 auto w = random_tensor(s, rng, false);
                 return gradcheck(in, [&](auto& x) {
                   std::mt19937_64 mask_rng(seed);
                   return contract(num::dropout(x[0], 0.3, mask_rng, true), w);
                 });
               }});
  for (bool causal : {true, false}) {
    c.push_back({causal ? "attention_causal" : "attention_bidirectional", [causal](std::mt19937_64& rng) {
                   const std::size_t heads = pick(rng, 1, 2), dh = pick(rng, 1, 3), width = heads * dh;
                   const std::size_t l1 = pick(rng, 1, 4), l2 = pick(rng, 1, 3);
                   num::SequenceLayout layout{{0, l1}, {l1, l2}};
                   std::vector<Tensor64> in{random_tensor({l1 + l2, 3 * width}, rng, true)};
                   auto w = random_tensor({l1 + l2, width}, rng, false);
                   return gradcheck(in, [&](auto& x) { return contract(num::attention(x[0], layout, heads, causal), w); });
                 }});
  }
  c.push_back({"segment_mean", [](std::mt19937_64& rng) {
                 const std::size_t N = pick(rng, 2, 6), d = pick(rng, 1, 4), B = pick(rng, 1, 3);
                 std::vector<std::vector<std::size_t>> groups(B);
                 for (auto& g : groups) {
                   const std::size_t n = pick(rng, 1, N);
                   for (std::size_t i = 0; i < n; ++i) g.push_back(pick(rng, 0, N - 1));
                 }
                 std::vector<Tensor64> in{random_tensor({N, d}, rng, true)};
                 auto w = random_tensor({B, d}, rng, false);
                 return gradcheck(in, [&](auto& x) { return contract(num::segment_mean(x[0], groups), w); });
               }});
  c.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                 const std::size_t M = pick(rng, 2, 5), V = pick(rng, 2, 6);
                 std::vector<std::int32_t> targets(M);
                 for (auto& t : targets) t = static_cast<std::int32_t>(pick(rng, 0, V - 1));
                 targets[0] = -1;
                 std::vector<Tensor64> in{random_tensor({M, V}, rng, true, -2, 2)};
                 return gradcheck(in, [&](auto& x) { return num::cross_entropy(x[0], targets); });
               }});
  c.push_back({"bce_weighted", [](std::mt19937_64& rng) {
                 const std::size_t B = pick(rng, 1, 6);
                 std::vector<double> labels(B);
                 for (auto& y : labels) y = static_cast<double>(pick(rng, 0, 1));
                 const double w = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
                 std::vector<Tensor64> in{random_tensor({B}, rng, true, 0.3, 0.7)};
                 return gradcheck(in, [&](auto& x) { return num::bce_weighted<double>(x[0], labels, w); });
               }});
  c.push_back({"sum", [](std::mt19937_64& rng) {
                 std::vector<Tensor64> in{random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng, true)};
                 return gradcheck(in, [&](auto& x) { return num::scale(num::sum(x[0]), 1.7); });
               }});
  c.push_back({"mean", [](std::mt19937_64& rng) {
                 std::vector<Tensor64> in{random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng, true)};
                 return gradcheck(in, [&](auto& x) { return num::scale(num::mean(x[0]), -0.9); });
               }});
  return c;
}

}  // namespace

std::vector<GradientCheck> run_gradient_suite(std::size_t instances, std::uint64_t seed) {
  std::vector<GradientCheck> out;
  std::mt19937_64 rng(seed);
  for (const auto& c : cases()) {
    GradientCheck g{c.name, instances, 0.0};
    for (std::size_t i = 0; i < instances; ++i) g.max_relative_error = std::max(g.max_relative_error, c.run(rng));
    out.push_back(g);
  }
  return out;
}

}  // namespace uq::testing
