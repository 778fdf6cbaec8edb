#include "uq/numerics/optim.hpp"

#include <cmath>
#include <string>

#include "uq/common/error.hpp"

namespace uq::num {

void AdamConfig::validate() const {
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail(ErrorCode::kConfig, "warmup fraction must lie in [0, 1]");
  if (total_steps == 0) fail(ErrorCode::kConfig, "total steps must be positive");
  if (!(peak_lr > 0.0)) fail(ErrorCode::kConfig, "learning rate must be positive");
  if (weight_decay < 0.0) fail(ErrorCode::kConfig, "weight decay must be non-negative");
}

template <typename T>
OptimizerState<T> make_optimizer_state(const std::vector<BasicTensor<T>>& params, const AdamConfig& config) {
  config.validate();
  OptimizerState<T> s;
  s.config = config;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.numel(), T(0));
    s.second_moment.emplace_back(p.numel(), T(0));
  }
  return s;
}

std::size_t warmup_steps(const AdamConfig& config) {
  return static_cast<std::size_t>(std::llround(config.warmup_fraction * static_cast<double>(config.total_steps)));
}

double lr_at(std::size_t step, const AdamConfig& c) {
  const std::size_t warm = warmup_steps(c);
  if (step >= c.total_steps) return 0.0;
  if (step < warm) return c.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  return c.peak_lr * static_cast<double>(c.total_steps - step) / static_cast<double>(c.total_steps - warm);
}

template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, OptimizerState<T>& state) {
  const auto& c = state.config;
  if (params.size() != state.first_moment.size()) fail(ErrorCode::kDimension, "optimizer state tracks a different parameter list");
  if (state.step >= c.total_steps) fail(ErrorCode::kConfig, "optimizer stepped past its schedule");

  double sq = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].grad().size() != state.first_moment[k].size()) {
      fail(ErrorCode::kDimension, "moment accumulator shape mismatch for parameter " + std::to_string(k));
    }
    for (T g : params[k].grad()) {
      if (!std::isfinite(g)) fail(ErrorCode::kDivergence, "non-finite gradient at step " + std::to_string(state.step));
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  double clip = 1.0;
  if (c.clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > c.clip_norm) clip = c.clip_norm / norm;
  }

  const double lr = lr_at(state.step, c);
  const std::size_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T decay = T(1.0 - lr * c.weight_decay);
  const T step_size = T(lr / bc1);
  const T inv_bc2 = T(1.0 / bc2);
  const T eps = T(c.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    auto g = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] * T(clip);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      w[i] *= decay;
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
  ++state.step;
}

template OptimizerState<float> make_optimizer_state(const std::vector<BasicTensor<float>>&, const AdamConfig&);
template OptimizerState<double> make_optimizer_state(const std::vector<BasicTensor<double>>&, const AdamConfig&);
template void adam_step(std::vector<BasicTensor<float>>&, OptimizerState<float>&);
template void adam_step(std::vector<BasicTensor<double>>&, OptimizerState<double>&);

}  // namespace uq::num
