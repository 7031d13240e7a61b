// Compiled with -mavx2 -mfma. Nothing in here may be called unless
// cpu_supports(Isa::avx2) returned true.

#include <immintrin.h>

#include "gnnopf/kernels.hpp"

namespace gnnopf::kernels {
namespace {

// y[0..n) += alpha * x[0..n)
inline void axpy_row(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d y0 = _mm256_loadu_pd(y + j);
    __m256d y1 = _mm256_loadu_pd(y + j + 4);
    y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), y0);
    y1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j + 4), y1);
    _mm256_storeu_pd(y + j, y0);
    _mm256_storeu_pd(y + j + 4, y1);
  }
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(y + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + j), _mm256_loadu_pd(y + j)));
  }
  for (; j < n; ++j) y[j] += alpha * x[j];
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      axpy_row(n, aip, b + p * n, ci);
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* br = b + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double arp = a[r * k + p];
      if (arp == 0.0) continue;
      axpy_row(n, arp, br, c + p * n);
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t q = 0; q < k; ++q) {
      const double* bq = b + q * n;
      __m256d acc = _mm256_setzero_pd();
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(ai + j), _mm256_loadu_pd(bq + j), acc);
      double tail = 0.0;
      for (; j < n; ++j) tail += ai[j] * bq[j];
      c[i * k + q] += hsum(acc) + tail;
    }
  }
}

void spmm_acc(const SparseMatrix& s, std::size_t f, const double* b, double* c) {
  for (std::size_t i = 0; i < s.n; ++i) {
    double* ci = c + i * f;
    for (std::size_t p = s.row_ptr[i]; p < s.row_ptr[i + 1]; ++p) axpy_row(f, s.val[p], b + s.col[p] * f, ci);
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) { axpy_row(n, alpha, x, y); }

void hadamard_acc(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), _mm256_loadu_pd(z + i)));
  }
  for (; i < n; ++i) z[i] += x[i] * y[i];
}

constexpr Table kAvx2{Isa::avx2, "avx2", gemm_nn_acc, gemm_tn_acc, gemm_nt_acc, spmm_acc, axpy, hadamard_acc};

} // namespace

const Table* avx2_table_impl() { return &kAvx2; }

} // namespace gnnopf::kernels
