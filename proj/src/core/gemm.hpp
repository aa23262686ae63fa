#pragma once

#include <cstddef>

namespace tbsn {

// Row-major C = alpha * op(A) * op(B) + beta * C, forwarded to BLAS.
// op(A) is m x k, op(B) is k x n, C is m x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
          int lda, const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc);

// Convenience wrapper with tight leading dimensions.
template <typename T>
void matmul(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
            T alpha = T(1), T beta = T(0)) {
  gemm(trans_a, trans_b, m, n, k, alpha, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

// Pins the BLAS thread pool to one worker; all higher-level loops assume
// deterministic single-lane execution.
void init_blas_single_thread();

}  // namespace tbsn
