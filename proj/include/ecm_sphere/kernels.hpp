#pragma once
// Dense inner-loop kernels with a scalar reference path and an AVX2/FMA path
// chosen once at runtime from the host CPU.
//
// All higher-level math (matmul, Gram matrices, normalization) goes through
// this table so that the two paths can be equivalence-tested in isolation.

#include <cstddef>
#include <string_view>

namespace ecm_sphere::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // z[i] = x[i] * y[i]
  void (*mul)(const double* x, const double* y, double* z, std::size_t n);
  // x[i] *= a
  void (*scale)(double a, double* x, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void mul(const double* x, const double* y, double* z, std::size_t n);
void scale(double a, double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(ECM_SPHERE_HAVE_AVX2)
namespace avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void mul(const double* x, const double* y, double* z, std::size_t n);
void scale(double a, double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2
#endif

/// True when this binary carries the AVX2 path and the CPU supports it.
bool avx2_available();

/// The table for a specific ISA. Requesting avx2 on a host without it
/// returns the scalar table.
const KernelTable& table_for(Isa isa);

/// The process-wide active table. Selected on first use: AVX2 when
/// available, unless the environment variable ECM_SPHERE_SIMD=scalar.
const KernelTable& active();
Isa active_isa();
std::string_view isa_name(Isa isa);

/// Overrides the active table (tests and the --simd CLI flag). Not
/// thread-safe with respect to concurrent kernel use.
void force_isa(Isa isa);

// Row-major GEMM helpers built on the active table. All accumulate into c.
// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);

}  // namespace ecm_sphere::kernels
