#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "uq/numerics/tensor.hpp"

namespace uq::num {

/// Row ranges of independent sequences packed into one [N, width] matrix.
struct Segment {
  std::size_t offset;
  std::size_t length;
};
using SequenceLayout = std::vector<Segment>;

SequenceLayout single_sequence(std::size_t length);

// GELU, tanh form: 0.5 x (1 + tanh(kGeluC (x + kGeluA x^3))).
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

inline constexpr double kBceEpsilon = 1e-7;

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a[M,K] * b[N,K]^T
template <typename T> BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
// x[..., N] + bias[N]
template <typename T> BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

// Normalizes over the last dimension.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps = T(1e-5));

// table[V, d] rows picked by ids -> [ids.size(), d]
template <typename T> BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids);
template <typename T> BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows);

/// Inverted dropout; identity when !training or p == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, std::mt19937_64& rng, bool training);

/// Receives softmax-normalized attention weights, one [heads, len, len]
/// block per segment, zero where masked.
template <typename T>
using AttentionTap = std::vector<std::vector<T>>;

/// Multi-head scaled dot-product attention over packed sequences.
/// qkv is [N, 3 * width] laid out as (q | k | v); returns [N, width].
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& qkv, const SequenceLayout& layout, std::size_t heads, bool causal,
                         AttentionTap<T>* tap = nullptr);

// Mean of the listed rows per group: x[N, d] -> [groups.size(), d]
template <typename T>
BasicTensor<T> segment_mean(const BasicTensor<T>& x, const std::vector<std::vector<std::size_t>>& groups);

/// Mean next-token cross-entropy; targets < 0 are ignored.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets);

/// mean of -[w y log s + (1 - y) log(1 - s)], s clamped to [eps, 1 - eps].
template <typename T>
BasicTensor<T> bce_weighted(const BasicTensor<T>& scores, std::span<const T> labels, T positive_weight);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

}  // namespace uq::num
