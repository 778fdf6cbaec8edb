#include "uq/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernel.hpp"
#include "fastmath.hpp"
#include "uq/common/error.hpp"

namespace uq::num {

SequenceLayout single_sequence(std::size_t length) { return {Segment{0, length}}; }

namespace {

template <typename T>
using Node = typename BasicTensor<T>::Node;

template <typename T>
BasicTensor<T> make_out(Shape shape, std::initializer_list<const BasicTensor<T>*> inputs) {
  bool needs = false;
  if (grad_enabled()) {
    for (auto* in : inputs) needs = needs || in->requires_grad();
  }
  auto out = BasicTensor<T>::zeros(std::move(shape), needs);
  if (needs) {
    for (auto* in : inputs) out.node().parents.push_back(in->node_ptr());
  }
  return out;
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    fail(ErrorCode::kDimension, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " differ");
  }
}

template <typename T>
void require_finite(const BasicTensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::kNumericInput, std::string(op) + ": non-finite input");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    fail(ErrorCode::kDimension, "matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  }
  auto out = make_out<T>({M, N}, {&a, &b});
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), M, K, N, false);
  if (out.requires_grad()) {
    out.node().backward = [M, K, N](Node<T>& o) {
      auto& pa = *o.parents[0];
      auto& pb = *o.parents[1];
      // da = dout b^T, db = a^T dout
      if (pa.requires_grad) detail::gemm(o.grad.data(), pb.value.data(), pa.grad.data(), M, N, K, true, false, true);
      if (pb.requires_grad) detail::gemm(pa.value.data(), o.grad.data(), pb.grad.data(), K, M, N, true, true, false);
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  if (b.dim(1) != K) {
    fail(ErrorCode::kDimension, "matmul_bt: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
  }
  auto out = make_out<T>({M, N}, {&a, &b});
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), M, K, N, false, false, true);
  if (out.requires_grad()) {
    out.node().backward = [M, K, N](Node<T>& o) {
      auto& pa = *o.parents[0];
      auto& pb = *o.parents[1];
      // out = a b^T: da = dout b, db = dout^T a
      if (pa.requires_grad) detail::gemm(o.grad.data(), pb.value.data(), pa.grad.data(), M, N, K, true);
      if (pb.requires_grad) detail::gemm(o.grad.data(), pa.value.data(), pb.grad.data(), N, M, K, true, true, false);
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = make_out<T>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    out.node().backward = [](Node<T>& n) {
      for (int p = 0; p < 2; ++p) {
        auto& par = *n.parents[p];
        if (!par.requires_grad) continue;
        for (std::size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = make_out<T>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    out.node().backward = [](Node<T>& n) {
      auto& pa = *n.parents[0];
      auto& pb = *n.parents[1];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.value[i];
        if (pb.requires_grad) pb.grad[i] += n.grad[i] * pa.value[i];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  auto out = make_out<T>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
  if (out.requires_grad()) {
    out.node().backward = [factor](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * factor;
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require_rank(bias, 1, "add_bias");
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    fail(ErrorCode::kDimension, "add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t N = bias.dim(0);
  auto out = make_out<T>(x.shape(), {&x, &bias});
  auto o = out.data();
  auto v = x.data();
  auto b = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] + b[i % N];
  if (out.requires_grad()) {
    out.node().backward = [N](Node<T>& n) {
      auto& px = *n.parents[0];
      auto& pb = *n.parents[1];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (px.requires_grad) px.grad[i] += n.grad[i];
        if (pb.requires_grad) pb.grad[i % N] += n.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  auto out = make_out<T>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  const T c = T(kGeluC), a = T(kGeluA);
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T z = v[i];
    o[i] = T(0.5) * z * (T(1) + detail::tanh_fast<T>(c * (z + a * z * z * z)));
  }
  if (out.requires_grad()) {
    out.node().backward = [c, a](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const T z = p.value[i];
        const T t = detail::tanh_fast<T>(c * (z + a * z * z * z));
        const T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * z * z);
        p.grad[i] += n.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * z * dt);
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  auto out = make_out<T>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = v[i] >= 0 ? T(1) / (T(1) + std::exp(-v[i])) : std::exp(v[i]) / (T(1) + std::exp(v[i]));
  }
  if (out.requires_grad()) {
    out.node().backward = [](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * n.value[i] * (T(1) - n.value[i]);
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    fail(ErrorCode::kDimension, "softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  require_finite(x, "softmax");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  auto out = make_out<T>(s, {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * n * inner + b;
      T mx = v[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(v[base + k * inner] - mx);
        o[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) o[base + k * inner] /= total;
    }
  }
  if (out.requires_grad()) {
    out.node().backward = [outer, inner, n](Node<T>& nd) {
      auto& p = *nd.parents[0];
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
          const std::size_t base = a * n * inner + b;
          T dot = 0;
          for (std::size_t k = 0; k < n; ++k) dot += nd.grad[base + k * inner] * nd.value[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = base + k * inner;
            p.grad[i] += nd.value[i] * (nd.grad[i] - dot);
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const std::size_t N = gain.dim(0);
  if (x.rank() == 0 || x.shape().back() != N || bias.dim(0) != N) {
    fail(ErrorCode::kDimension, "layer_norm: " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()));
  }
  const std::size_t M = x.numel() / N;
  auto out = make_out<T>(x.shape(), {&x, &gain, &bias});
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(M);
  auto v = x.data();
  auto o = out.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < M; ++r) {
    const T* row = v.data() + r * N;
    T mu = 0;
    for (std::size_t j = 0; j < N; ++j) mu += row[j];
    mu /= T(N);
    T var = 0;
    for (std::size_t j = 0; j < N; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(N);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < N; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * N + j] = h;
      o[r * N + j] = h * g[j] + b[j];
    }
  }
  if (out.requires_grad()) {
    out.node().backward = [M, N, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
      auto& px = *n.parents[0];
      auto& pg = *n.parents[1];
      auto& pb = *n.parents[2];
      for (std::size_t r = 0; r < M; ++r) {
        const T* dy = n.grad.data() + r * N;
        const T* h = xhat.data() + r * N;
        if (pg.requires_grad || pb.requires_grad) {
          for (std::size_t j = 0; j < N; ++j) {
            if (pg.requires_grad) pg.grad[j] += dy[j] * h[j];
            if (pb.requires_grad) pb.grad[j] += dy[j];
          }
        }
        if (px.requires_grad) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < N; ++j) {
            const T dh = dy[j] * pg.value[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh /= T(N);
          mean_dh_h /= T(N);
          for (std::size_t j = 0; j < N; ++j) {
            const T dh = dy[j] * pg.value[j];
            px.grad[r * N + j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t V = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      fail(ErrorCode::kIndex, "embedding: id " + std::to_string(id) + " outside table of " + std::to_string(V));
    }
  }
  auto out = make_out<T>({ids.size(), d}, {&table});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, o.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (out.requires_grad()) {
    out.node().backward = [d, idv = std::vector<std::int32_t>(ids.begin(), ids.end())](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) p.grad[idv[i] * d + j] += n.grad[i * d + j];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t N = x.dim(0), d = x.dim(1);
  for (auto r : rows) {
    if (r >= N) fail(ErrorCode::kIndex, "gather_rows: row " + std::to_string(r) + " of " + std::to_string(N));
  }
  auto out = make_out<T>({rows.size(), d}, {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, o.begin() + static_cast<std::ptrdiff_t>(i * d));
  if (out.requires_grad()) {
    out.node().backward = [d, rv = std::vector<std::size_t>(rows.begin(), rows.end())](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t i = 0; i < rv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) p.grad[rv[i] * d + j] += n.grad[i * d + j];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) fail(ErrorCode::kConfig, "dropout rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::vector<T> mask(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = T(1.0 / (1.0 - p));
  for (auto& m : mask) m = u(rng) >= p ? keep_scale : T(0);
  auto out = make_out<T>(x.shape(), {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * mask[i];
  if (out.requires_grad()) {
    out.node().backward = [mask = std::move(mask)](Node<T>& n) {
      auto& par = *n.parents[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i] * mask[i];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& qkv, const SequenceLayout& layout, std::size_t heads, bool causal,
                         AttentionTap<T>* tap) {
  require_rank(qkv, 2, "attention");
  const std::size_t N = qkv.dim(0);
  if (qkv.dim(1) % 3 != 0 || heads == 0 || (qkv.dim(1) / 3) % heads != 0) {
    fail(ErrorCode::kDimension, "attention: width " + std::to_string(qkv.dim(1)) + " incompatible with " +
                                    std::to_string(heads) + " heads");
  }
  const std::size_t width = qkv.dim(1) / 3;
  const std::size_t dh = width / heads;
  const std::size_t stride = 3 * width;
  std::size_t covered = 0;
  for (const auto& s : layout) {
    if (s.offset + s.length > N) fail(ErrorCode::kDimension, "attention: segment exceeds input rows");
    covered += s.length;
  }
  if (covered != N) fail(ErrorCode::kDimension, "attention: layout does not cover the input rows");

  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  auto out = make_out<T>({N, width}, {&qkv});
  const T* in = qkv.data().data();
  T* o = out.data().data();

  // probabilities per segment: [heads][len][len]
  std::vector<std::vector<T>> probs(layout.size());
  std::vector<T> row;
  for (std::size_t s = 0; s < layout.size(); ++s) {
    const auto [off, len] = layout[s];
    auto& P = probs[s];
    P.assign(heads * len * len, T(0));
    row.resize(len);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        const T* q = in + (off + i) * stride + h * dh;
        const std::size_t jmax = causal ? i + 1 : len;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          const T* k = in + (off + j) * stride + width + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[c] * k[c];
          row[j] = dot * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        const T total = detail::exp_shifted<T>(row.data(), row.data(), jmax, mx);
        T* prow = P.data() + (h * len + i) * len;
        for (std::size_t j = 0; j < jmax; ++j) prow[j] = row[j] / total;
        T* orow = o + (off + i) * width + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          const T* v = in + (off + j) * stride + 2 * width + h * dh;
          const T pj = prow[j];
          for (std::size_t c = 0; c < dh; ++c) orow[c] += pj * v[c];
        }
      }
    }
  }
  if (tap != nullptr) *tap = probs;

  if (out.requires_grad()) {
    out.node().backward = [layout, heads, causal, width, dh, stride, inv_sqrt,
                           probs = std::move(probs)](Node<T>& n) {
      auto& p = *n.parents[0];
      const T* in = p.value.data();
      T* g = p.grad.data();
      std::vector<T> dp;
      for (std::size_t s = 0; s < layout.size(); ++s) {
        const auto [off, len] = layout[s];
        const auto& P = probs[s];
        dp.resize(len);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t jmax = causal ? i + 1 : len;
            const T* prow = P.data() + (h * len + i) * len;
            const T* dout = n.grad.data() + (off + i) * width + h * dh;
            T dot = 0;
            for (std::size_t j = 0; j < jmax; ++j) {
              const T* v = in + (off + j) * stride + 2 * width + h * dh;
              T* dv = g + (off + j) * stride + 2 * width + h * dh;
              T acc = 0;
              for (std::size_t c = 0; c < dh; ++c) {
                acc += dout[c] * v[c];
                dv[c] += prow[j] * dout[c];
              }
              dp[j] = acc;
              dot += prow[j] * acc;
            }
            const T* q = in + (off + i) * stride + h * dh;
            T* dq = g + (off + i) * stride + h * dh;
            for (std::size_t j = 0; j < jmax; ++j) {
              const T ds = prow[j] * (dp[j] - dot) * inv_sqrt;
              if (ds == T(0)) continue;
              const T* k = in + (off + j) * stride + width + h * dh;
              T* dk = g + (off + j) * stride + width + h * dh;
              for (std::size_t c = 0; c < dh; ++c) {
                dq[c] += ds * k[c];
                dk[c] += ds * q[c];
              }
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> segment_mean(const BasicTensor<T>& x, const std::vector<std::vector<std::size_t>>& groups) {
  require_rank(x, 2, "segment_mean");
  const std::size_t N = x.dim(0), d = x.dim(1);
  for (const auto& grp : groups) {
    if (grp.empty()) fail(ErrorCode::kIndex, "segment_mean: empty group");
    for (auto r : grp)
      if (r >= N) fail(ErrorCode::kIndex, "segment_mean: row " + std::to_string(r) + " of " + std::to_string(N));
  }
  auto out = make_out<T>({groups.size(), d}, {&x});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t b = 0; b < groups.size(); ++b) {
    const T w = T(1) / T(groups[b].size());
    for (auto r : groups[b])
      for (std::size_t j = 0; j < d; ++j) o[b * d + j] += v[r * d + j] * w;
  }
  if (out.requires_grad()) {
    out.node().backward = [groups, d](Node<T>& n) {
      auto& p = *n.parents[0];
      for (std::size_t b = 0; b < groups.size(); ++b) {
        const T w = T(1) / T(groups[b].size());
        for (auto r : groups[b])
          for (std::size_t j = 0; j < d; ++j) p.grad[r * d + j] += n.grad[b * d + j] * w;
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t M = logits.dim(0), V = logits.dim(1);
  if (targets.size() != M) fail(ErrorCode::kDimension, "cross_entropy: target count differs from rows");
  std::size_t counted = 0;
  for (auto t : targets) {
    if (t >= static_cast<std::int64_t>(V)) fail(ErrorCode::kIndex, "cross_entropy: target outside vocabulary");
    if (t >= 0) ++counted;
  }
  if (counted == 0) fail(ErrorCode::kDimension, "cross_entropy: no targets");
  auto out = make_out<T>({}, {&logits});
  auto z = logits.data();
  std::vector<T> probs(out.requires_grad() ? M * V : 0);
  std::vector<T> scratch(V);
  double loss = 0;
  for (std::size_t r = 0; r < M; ++r) {
    if (targets[r] < 0) continue;
    const T* row = z.data() + r * V;
    T mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    T* e = probs.empty() ? scratch.data() : probs.data() + r * V;
    const T total = detail::exp_shifted<T>(row, e, V, mx);
    const T lse = mx + std::log(total);
    if (!std::isfinite(lse)) fail(ErrorCode::kNumericInput, "cross_entropy: non-finite logits");
    loss += static_cast<double>(lse - row[targets[r]]);
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < V && !probs.empty(); ++j) e[j] *= inv;
  }
  out.data()[0] = static_cast<T>(loss / static_cast<double>(counted));
  if (out.requires_grad()) {
    out.node().backward = [M, V, counted, probs = std::move(probs),
                           tv = std::vector<std::int32_t>(targets.begin(), targets.end())](Node<T>& n) {
      auto& p = *n.parents[0];
      const T g = n.grad[0] / T(counted);
      for (std::size_t r = 0; r < M; ++r) {
        if (tv[r] < 0) continue;
        for (std::size_t j = 0; j < V; ++j) p.grad[r * V + j] += g * probs[r * V + j];
        p.grad[r * V + tv[r]] -= g;
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> bce_weighted(const BasicTensor<T>& scores, std::span<const T> labels, T positive_weight) {
  if (scores.numel() != labels.size()) fail(ErrorCode::kDimension, "bce_weighted: score and label counts differ");
  if (labels.empty()) fail(ErrorCode::kDimension, "bce_weighted: empty batch");
  if (!(positive_weight > T(0))) fail(ErrorCode::kConfig, "bce_weighted: positive weight must be > 0");
  for (T y : labels) {
    if (y != T(0) && y != T(1)) fail(ErrorCode::kLabel, "bce_weighted: label " + std::to_string(y) + " not in {0,1}");
  }
  const T lo = T(kBceEpsilon), hi = T(1) - T(kBceEpsilon);
  auto out = make_out<T>({}, {&scores});
  auto s = scores.data();
  const std::size_t B = labels.size();
  double loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const T sc = std::clamp(s[i], lo, hi);
    loss -= labels[i] == T(1) ? static_cast<double>(positive_weight * std::log(sc))
                              : static_cast<double>(std::log(T(1) - sc));
  }
  out.data()[0] = static_cast<T>(loss / static_cast<double>(B));
  if (out.requires_grad()) {
    out.node().backward = [B, lo, hi, positive_weight, yv = std::vector<T>(labels.begin(), labels.end())](Node<T>& n) {
      auto& p = *n.parents[0];
      const T g = n.grad[0] / T(B);
      for (std::size_t i = 0; i < B; ++i) {
        const T sc = p.value[i];
        if (sc < lo || sc > hi) continue;
        p.grad[i] += yv[i] == T(1) ? -g * positive_weight / sc : g / (T(1) - sc);
      }
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  auto out = make_out<T>({}, {&x});
  T total = 0;
  for (T v : x.data()) total += v;
  out.data()[0] = total;
  if (out.requires_grad()) {
    out.node().backward = [](Node<T>& n) {
      auto& p = *n.parents[0];
      for (auto& g : p.grad) g += n.grad[0];
    };
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) fail(ErrorCode::kDimension, "mean of empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

#define UQ_INSTANTIATE_OPS(T)                                                                                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> matmul_bt(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                   \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                       \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const std::int32_t>);                  \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>);                  \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, std::mt19937_64&, bool);                    \
  template BasicTensor<T> attention(const BasicTensor<T>&, const SequenceLayout&, std::size_t, bool,         \
                                    AttentionTap<T>*);                                                        \
  template BasicTensor<T> segment_mean(const BasicTensor<T>&, const std::vector<std::vector<std::size_t>>&); \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::int32_t>);               \
  template BasicTensor<T> bce_weighted(const BasicTensor<T>&, std::span<const T>, T);                        \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);

UQ_INSTANTIATE_OPS(float)
UQ_INSTANTIATE_OPS(double)

}  // namespace uq::num
