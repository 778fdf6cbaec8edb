#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uq::testing {

struct GradientCheck {
  std::string op;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
};

/// Finite-difference check of every differentiable numerics op on random
/// small instances (64-bit, h = 1e-3).
std::vector<GradientCheck> run_gradient_suite(std::size_t instances, std::uint64_t seed);

}  // namespace uq::testing
