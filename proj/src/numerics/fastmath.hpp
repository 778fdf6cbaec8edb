#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

namespace uq::num::detail {

// expf via 2^n * p(r), |r| <= ln2/2, degree-6 Taylor; relative error below
// 2e-7 and written so the compiler can vectorize loops over it.
inline float exp_f32(float x) {
  x = x < -87.0f ? -87.0f : x;  // NaN passes through
  x = x > 88.0f ? 88.0f : x;
  // round to nearest by adding and removing 1.5 * 2^23
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  const float r = (x - n * 0.693145751953125f) - n * 1.42860682030941723e-6f;
  float p = 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

template <typename T>
inline T exp_fast(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return exp_f32(x);
  } else {
    return std::exp(x);
  }
}

template <typename T>
inline T tanh_fast(T x) {
  if constexpr (std::is_same_v<T, float>) {
    // 1 - 2 / (e^{2x} + 1); exact limits at the clamp ends of exp_f32
    return 1.0f - 2.0f / (exp_f32(2.0f * x) + 1.0f);
  } else {
    return std::tanh(x);
  }
}

// out[j] = exp(in[j] - shift); returns the sum, accumulated in a fixed
// order of 16 interleaved partial sums.
template <typename T>
inline T exp_shifted(const T* in, T* out, std::size_t n, T shift) {
  for (std::size_t j = 0; j < n; ++j) out[j] = exp_fast<T>(in[j] - shift);
  T part[16] = {};
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16)
    for (std::size_t l = 0; l < 16; ++l) part[l] += out[j + l];
  for (; j < n; ++j) part[j % 16] += out[j];
  T total = 0;
  for (T p : part) total += p;
  return total;
}

}  // namespace uq::num::detail
