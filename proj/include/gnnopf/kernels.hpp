#pragma once

// Data-parallel inner loops used by the differentiation engine. Every kernel
// has a portable scalar reference and, on x86-64, an AVX2/FMA variant. The
// active table is chosen once at startup from CPUID; GNNOPF_KERNELS=scalar
// (or select()) forces the reference path.

#include <cstddef>
#include <string_view>

#include "gnnopf/matrix.hpp"

namespace gnnopf::kernels {

enum class Isa { scalar, avx2 };

struct Table {
  Isa isa;
  const char* name;
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn_acc)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  // C[k x n] += A^T * B with A m x k, B m x n
  void (*gemm_tn_acc)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  // C[m x k] += A * B^T with A m x n, B k x n
  void (*gemm_nt_acc)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
  // C[n x f] += S * B for CSR S
  void (*spmm_acc)(const SparseMatrix& s, std::size_t f, const double* b, double* c);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // z += x .* y
  void (*hadamard_acc)(std::size_t n, const double* x, const double* y, double* z);
};

const Table& scalar_table();
// Null when the binary was built without the AVX2 translation unit.
const Table* avx2_table();

bool cpu_supports(Isa isa);

// Currently active table. Initialized lazily from CPUID and the
// GNNOPF_KERNELS environment variable.
const Table& active();

// Force a particular implementation; throws UsageError when unavailable.
void select(Isa isa);
Isa parse_isa(std::string_view name);
const char* isa_name(Isa isa);

} // namespace gnnopf::kernels
