#include "gnnopf/kernels.hpp"

namespace gnnopf::kernels {
namespace {

void gemm_nn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* br = b + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double arp = a[r * k + p];
      if (arp == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += arp * br[j];
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    for (std::size_t q = 0; q < k; ++q) {
      const double* bq = b + q * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bq[j];
      c[i * k + q] += acc;
    }
  }
}

void spmm_acc(const SparseMatrix& s, std::size_t f, const double* b, double* c) {
  for (std::size_t i = 0; i < s.n; ++i) {
    double* ci = c + i * f;
    for (std::size_t p = s.row_ptr[i]; p < s.row_ptr[i + 1]; ++p) {
      const double w = s.val[p];
      const double* bj = b + s.col[p] * f;
      for (std::size_t j = 0; j < f; ++j) ci[j] += w * bj[j];
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void hadamard_acc(std::size_t n, const double* x, const double* y, double* z) {
  for (std::size_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}

constexpr Table kScalar{Isa::scalar, "scalar", gemm_nn_acc, gemm_tn_acc, gemm_nt_acc, spmm_acc, axpy, hadamard_acc};

} // namespace

const Table& scalar_table() { return kScalar; }

} // namespace gnnopf::kernels
