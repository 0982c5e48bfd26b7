#pragma once

// Dense matmul kernels backing the autodiff tape. Each kernel exists twice:
// a serial reference (the ground truth used by the parity tests) and an
// OpenMP version parallelized over output rows. Both accumulate every output
// element in the same k-order, so serial and parallel results are bitwise
// identical for any thread count.

namespace fuseser::kernels {

// Caps OpenMP worker count from FUSESER_THREADS when set. Call once at
// process start; safe to call when OpenMP is absent.
void init_threads_from_env();
int max_threads();

// C[m x n] = A[m x k] * B[k x n]            (+ C if accumulate)
template <typename T>
void gemm_nn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);

// C[m x n] = A[m x k] * B[n x k]^T          (+ C if accumulate)
template <typename T>
void gemm_nt_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);

// C[m x n] = A[k x m]^T * B[k x n]          (+ C if accumulate)
template <typename T>
void gemm_tn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);

}  // namespace fuseser::kernels
