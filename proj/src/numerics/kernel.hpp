#pragma once

#include <cstddef>

namespace uq::num::detail {

// c[M,N] (+)= A[M,K] * B[K,N], row-major. With a_t set, `a` holds A^T as
// [K,M]; with b_t set, `b` holds B^T as [N,K].
//
// Every output element is accumulated over k in ascending order by the same
// instruction sequence whatever M is, so row i of the product is
// bit-identical to the product of row i alone.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N, bool accumulate,
          bool a_t = false, bool b_t = false);

// out[N,M] = in[M,N]^T
template <typename T>
void transpose(const T* in, T* out, std::size_t M, std::size_t N);

}  // namespace uq::num::detail
