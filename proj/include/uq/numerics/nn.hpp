#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "uq/common/error.hpp"
#include "uq/numerics/ops.hpp"
#include "uq/numerics/tensor.hpp"

namespace uq::num {

template <typename T>
BasicTensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
BasicTensor<T> constant_init(Shape shape, T value) {
  std::vector<T> v(shape_numel(shape), value);
  return BasicTensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  static Linear make(std::size_t in, std::size_t out, double stddev, std::mt19937_64& rng) {
    return {normal_init<T>({in, out}, stddev, rng), constant_init<T>({out}, T(0))};
  }
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
  void collect(std::vector<BasicTensor<T>>& out) const {
    out.push_back(weight);
    out.push_back(bias);
  }
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gain;
  BasicTensor<T> bias;

  static LayerNorm make(std::size_t width) { return {constant_init<T>({width}, T(1)), constant_init<T>({width}, T(0))}; }
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gain, bias); }
  void collect(std::vector<BasicTensor<T>>& out) const {
    out.push_back(gain);
    out.push_back(bias);
  }
};

template <typename T>
struct BlockContext {
  std::size_t heads = 1;
  bool causal = true;
  double dropout = 0.0;
  bool training = false;
  std::mt19937_64* rng = nullptr;
  AttentionTap<T>* tap = nullptr;
};

/// Pre-norm transformer block:
///   h = x + Drop(Proj(Attn(QKV(LN1(x)))))
///   y = h + Drop(Out(GELU(FC(LN2(h)))))
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNorm<T> ln2;
  Linear<T> fc;
  Linear<T> out;

  static TransformerBlock make(std::size_t width, std::size_t ff_width, std::size_t depth, std::mt19937_64& rng) {
    const double std_in = 0.02;
    const double std_res = 0.02 / std::sqrt(2.0 * static_cast<double>(depth));
    TransformerBlock b;
    b.ln1 = LayerNorm<T>::make(width);
    b.qkv = Linear<T>::make(width, 3 * width, std_in, rng);
    b.proj = Linear<T>::make(width, width, std_res, rng);
    b.ln2 = LayerNorm<T>::make(width);
    b.fc = Linear<T>::make(width, ff_width, std_in, rng);
    b.out = Linear<T>::make(ff_width, width, std_res, rng);
    return b;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x, const SequenceLayout& layout, const BlockContext<T>& ctx) const {
    auto drop = [&](const BasicTensor<T>& t) {
      return ctx.rng != nullptr ? dropout(t, ctx.dropout, *ctx.rng, ctx.training) : t;
    };
    auto a = attention(qkv(ln1(x)), layout, ctx.heads, ctx.causal, ctx.tap);
    auto h = add(x, drop(proj(a)));
    auto f = out(gelu(fc(ln2(h))));
    return add(h, drop(f));
  }

  void collect(std::vector<BasicTensor<T>>& params) const {
    ln1.collect(params);
    qkv.collect(params);
    proj.collect(params);
    ln2.collect(params);
    fc.collect(params);
    out.collect(params);
  }
};

/// Copies values between two parameter lists with identical shapes.
template <typename To, typename From>
void copy_parameters(const std::vector<BasicTensor<From>>& src, std::vector<BasicTensor<To>>& dst);

template <typename T>
std::size_t parameter_count(const std::vector<BasicTensor<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}


template <typename To, typename From>
void copy_parameters(const std::vector<BasicTensor<From>>& src, std::vector<BasicTensor<To>>& dst) {
  if (src.size() != dst.size()) fail(ErrorCode::kDimension, "parameter lists differ in length");
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k].shape() != dst[k].shape()) {
      fail(ErrorCode::kDimension, "parameter " + std::to_string(k) + " shape " + shape_str(src[k].shape()) +
                                      " vs " + shape_str(dst[k].shape()));
    }
    auto s = src[k].data();
    auto d = dst[k].data();
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<To>(s[i]);
  }
}

}  // namespace uq::num
