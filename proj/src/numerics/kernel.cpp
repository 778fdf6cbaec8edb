#include "kernel.hpp"

#include <algorithm>
#include <new>
#include <vector>

namespace uq::num::detail {

namespace {

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(64))); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(64)); }
  bool operator==(const AlignedAllocator&) const { return true; }
};

template <typename T>
struct Vec {
  static constexpr std::size_t kLanes = 64 / sizeof(T);
  typedef T type __attribute__((vector_size(64), aligned(sizeof(T))));
};

template <typename T>
inline typename Vec<T>::type load(const T* p) {
  return *reinterpret_cast<const typename Vec<T>::type*>(p);
}

template <typename T>
inline void store(T* p, typename Vec<T>::type v) {
  *reinterpret_cast<typename Vec<T>::type*>(p) = v;
}

// Register tile: kRows rows by kVecs vectors of columns. A(r, k) is
// a[r * ars + k * aks]; b is a packed panel with row stride ldb.
template <typename T, std::size_t kRows, std::size_t kVecs>
inline void tile(const T* a, std::size_t ars, std::size_t aks, const T* b, T* c, std::size_t K, std::size_t ldb,
                 std::size_t ldc, bool accumulate) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::kLanes;
  V acc[kRows * kVecs] = {};
  if (accumulate) {
#pragma GCC unroll 16
    for (std::size_t x = 0; x < kRows * kVecs; ++x) acc[x] = load(c + (x / kVecs) * ldc + (x % kVecs) * W);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const T* bk = b + k * ldb;
    const T* ak = a + k * aks;
#pragma GCC unroll 16
    for (std::size_t x = 0; x < kRows * kVecs; ++x) acc[x] += ak[(x / kVecs) * ars] * load(bk + (x % kVecs) * W);
  }
#pragma GCC unroll 16
  for (std::size_t x = 0; x < kRows * kVecs; ++x) store(c + (x / kVecs) * ldc + (x % kVecs) * W, acc[x]);
}

// One packed column panel of kVecs vectors against all rows of A.
template <typename T, std::size_t kVecs>
void panel(const T* a, std::size_t ars, std::size_t aks, const T* packed, T* c, std::size_t M, std::size_t K,
           std::size_t ldc, bool accumulate) {
  constexpr std::size_t ldb = kVecs * Vec<T>::kLanes;
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) tile<T, 4, kVecs>(a + i * ars, ars, aks, packed, c + i * ldc, K, ldb, ldc, accumulate);
  for (; i < M; ++i) tile<T, 1, kVecs>(a + i * ars, ars, aks, packed, c + i * ldc, K, ldb, ldc, accumulate);
}

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N, bool accumulate, bool a_t,
          bool b_t) {
  constexpr std::size_t W = Vec<T>::kLanes;
  const std::size_t ars = a_t ? 1 : K;
  const std::size_t aks = a_t ? M : 1;
  // Panels are packed contiguously so they stay cache resident while every
  // row block of A streams past them. Columns past N are zero padding.
  std::vector<T, AlignedAllocator<T>> packed(K * 4 * W);
  auto pack = [&](std::size_t j0, std::size_t cols, std::size_t width) {
    if (cols < width) std::fill(packed.begin(), packed.end(), T(0));
    for (std::size_t k = 0; k < K; ++k) {
      T* dst = packed.data() + k * width;
      if (b_t) {
        for (std::size_t j = 0; j < cols; ++j) dst[j] = b[(j0 + j) * K + k];
      } else {
        std::copy_n(b + k * N + j0, cols, dst);
      }
    }
  };
  std::size_t j = 0;
  for (; j + 4 * W <= N; j += 4 * W) {
    pack(j, 4 * W, 4 * W);
    panel<T, 4>(a, ars, aks, packed.data(), c + j, M, K, N, accumulate);
  }
  for (; j + W <= N; j += W) {
    pack(j, W, W);
    panel<T, 1>(a, ars, aks, packed.data(), c + j, M, K, N, accumulate);
  }
  if (j < N) {
    const std::size_t cols = N - j;
    pack(j, cols, W);
    std::vector<T, AlignedAllocator<T>> tmp(M * W, T(0));
    if (accumulate)
      for (std::size_t i = 0; i < M; ++i) std::copy_n(c + i * N + j, cols, tmp.data() + i * W);
    panel<T, 1>(a, ars, aks, packed.data(), tmp.data(), M, K, W, accumulate);
    for (std::size_t i = 0; i < M; ++i) std::copy_n(tmp.data() + i * W, cols, c + i * N + j);
  }
}

template <typename T>
void transpose(const T* in, T* out, std::size_t M, std::size_t N) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < M; i0 += B)
    for (std::size_t j0 = 0; j0 < N; j0 += B)
      for (std::size_t i = i0; i < i0 + B && i < M; ++i)
        for (std::size_t j = j0; j < j0 + B && j < N; ++j) out[j * M + i] = in[i * N + j];
}

template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool, bool,
                          bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool,
                           bool, bool);
template void transpose<float>(const float*, float*, std::size_t, std::size_t);
template void transpose<double>(const double*, double*, std::size_t, std::size_t);

}  // namespace uq::num::detail
