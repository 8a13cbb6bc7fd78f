#pragma once

#include <cstddef>

#include "arvit/core/tensor.hpp"

// Row-major accumulate-into kernels, C += op(A) * op(B). Loop orders keep the
// innermost access contiguous; reduction order is fixed.
namespace arvit::detail {

// A: MxK, B: KxN, C: MxN
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const Real* A,
                    const Real* B, Real* C) {
  for (std::size_t i = 0; i < M; ++i) {
    Real* c = C + i * N;
    const Real* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const Real av = a[k];
      if (av == 0.0) continue;
      const Real* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// A: MxK, B: NxK, C: MxN
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const Real* A,
                    const Real* B, Real* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const Real* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const Real* b = B + j * K;
      Real s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * N + j] += s;
    }
  }
}

// A: KxM, B: KxN, C: MxN
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const Real* A,
                    const Real* B, Real* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const Real* a = A + k * M;
    const Real* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const Real av = a[i];
      if (av == 0.0) continue;
      Real* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace arvit::detail
