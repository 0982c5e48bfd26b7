#include "fuseser/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fuseser::kernels {

namespace {
// Below this many multiply-adds the parallel fork costs more than it saves.
constexpr long kParallelFlopThreshold = 1 << 15;
}  // namespace

void init_threads_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("FUSESER_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) omp_set_num_threads(std::min(n, omp_get_max_threads()));
  }
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm_nn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T aip = a[static_cast<std::size_t>(i) * k + p];
      const T* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#ifdef _OPENMP
  const long flops = static_cast<long>(m) * k * n;
  if (flops >= kParallelFlopThreshold && m > 1) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      T* ci = c + static_cast<std::size_t>(i) * n;
      if (!accumulate) std::fill(ci, ci + n, T(0));
      for (int p = 0; p < k; ++p) {
        const T aip = a[static_cast<std::size_t>(i) * k + p];
        const T* bp = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
    return;
  }
#endif
  gemm_nn_serial(a, b, c, m, k, n, accumulate);
}

template <typename T>
void gemm_nt_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<std::size_t>(j) * k;
      T acc = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T(0);
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#ifdef _OPENMP
  const long flops = static_cast<long>(m) * k * n;
  if (flops >= kParallelFlopThreshold && m > 1) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      const T* ai = a + static_cast<std::size_t>(i) * k;
      for (int j = 0; j < n; ++j) {
        const T* bj = b + static_cast<std::size_t>(j) * k;
        T acc = accumulate ? c[static_cast<std::size_t>(i) * n + j] : T(0);
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        c[static_cast<std::size_t>(i) * n + j] = acc;
      }
    }
    return;
  }
#endif
  gemm_nt_serial(a, b, c, m, k, n, accumulate);
}

// Serial reference streams rows of B (p outer); the parallel version keys on
// output row i with p innermost. Both accumulate each element in ascending p,
// so results stay bitwise equal.
template <typename T>
void gemm_tn_serial(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  if (!accumulate)
    std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  for (int p = 0; p < k; ++p) {
    const T* ap = a + static_cast<std::size_t>(p) * m;
    const T* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#ifdef _OPENMP
  const long flops = static_cast<long>(m) * k * n;
  if (flops >= kParallelFlopThreshold && m > 1) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      T* ci = c + static_cast<std::size_t>(i) * n;
      if (!accumulate) std::fill(ci, ci + n, T(0));
      for (int p = 0; p < k; ++p) {
        const T api = a[static_cast<std::size_t>(p) * m + i];
        const T* bp = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
    return;
  }
#endif
  gemm_tn_serial(a, b, c, m, k, n, accumulate);
}

#define FUSESER_INSTANTIATE(T)                                                        \
  template void gemm_nn_serial<T>(const T*, const T*, T*, int, int, int, bool);      \
  template void gemm_nn<T>(const T*, const T*, T*, int, int, int, bool);             \
  template void gemm_nt_serial<T>(const T*, const T*, T*, int, int, int, bool);      \
  template void gemm_nt<T>(const T*, const T*, T*, int, int, int, bool);             \
  template void gemm_tn_serial<T>(const T*, const T*, T*, int, int, int, bool);      \
  template void gemm_tn<T>(const T*, const T*, T*, int, int, int, bool);

FUSESER_INSTANTIATE(float)
FUSESER_INSTANTIATE(double)

#undef FUSESER_INSTANTIATE

}  // namespace fuseser::kernels
