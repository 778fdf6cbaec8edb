#pragma once

#include <cstddef>
#include <vector>

#include "uq/numerics/tensor.hpp"

namespace uq::num {

struct AdamConfig {
  double peak_lr = 1e-3;
  double warmup_fraction = 0.0;
  std::size_t total_steps = 1;
  double weight_decay = 0.0;  // decoupled, AdamW-style
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables

  void validate() const;
};

template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const std::vector<BasicTensor<T>>& params, const AdamConfig& config);

std::size_t warmup_steps(const AdamConfig& config);

/// Linear ramp 0 -> peak over the warmup steps, then linear decay to 0 at
/// total_steps. Update number s (0-based) runs at lr_at(s).
double lr_at(std::size_t step, const AdamConfig& config);

/// One Adam update with decoupled weight decay:
///   p <- p (1 - lr wd);  p <- p - lr m_hat / (sqrt(v_hat) + eps)
/// Throws kDivergence on a non-finite gradient.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, OptimizerState<T>& state);

}  // namespace uq::num
