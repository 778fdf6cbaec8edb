#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "uq/numerics/tensor.hpp"

namespace uq::testing {

using num::Tensor64;

/// Central finite-difference check in 64-bit, Richardson-extrapolated from
/// steps h and h/2 so the oracle's own error is O(h^4). Returns the largest
/// per-input relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline double gradcheck(std::vector<Tensor64>& inputs, const std::function<Tensor64(std::vector<Tensor64>&)>& loss_fn,
                        double h = 1e-3) {
  for (auto& t : inputs)
    if (t.requires_grad()) t.zero_grad();
  auto loss = loss_fn(inputs);
  loss.backward();

  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> numeric(t.numel());
    {
      num::NoGradGuard guard;
      auto values = t.data();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        auto central = [&](double step) {
          values[i] = saved + step;
          const double up = loss_fn(inputs).item();
          values[i] = saved - step;
          const double down = loss_fn(inputs).item();
          values[i] = saved;
          return (up - down) / (2.0 * step);
        };
        numeric[i] = (4.0 * central(h / 2) - central(h)) / 3.0;
      }
    }
    double diff = 0, na = 0, nn = 0;
    auto analytic = t.grad();
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    if (denom < 1e-12) continue;
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace uq::testing
