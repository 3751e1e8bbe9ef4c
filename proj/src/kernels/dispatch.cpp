#include <atomic>
#include <cstdlib>
#include <cstring>

#include "ecm_sphere/kernels.hpp"

namespace ecm_sphere::kernels {

namespace {

constexpr KernelTable kScalar{scalar::dot, scalar::axpy, scalar::mul, scalar::scale, scalar::sum};
#if defined(ECM_SPHERE_HAVE_AVX2)
constexpr KernelTable kAvx2{avx2::dot, avx2::axpy, avx2::mul, avx2::scale, avx2::sum};
#endif

Isa detect() {
  const char* env = std::getenv("ECM_SPHERE_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Isa::scalar;
  return avx2_available() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool avx2_available() {
#if defined(ECM_SPHERE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

const KernelTable& table_for(Isa isa) {
#if defined(ECM_SPHERE_HAVE_AVX2)
  if (isa == Isa::avx2 && avx2_available()) return kAvx2;
#endif
  (void)isa;
  return kScalar;
}

const KernelTable& active() { return table_for(current().load(std::memory_order_relaxed)); }

Isa active_isa() {
  Isa isa = current().load(std::memory_order_relaxed);
  return (isa == Isa::avx2 && !avx2_available()) ? Isa::scalar : isa;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void force_isa(Isa isa) { current().store(isa, std::memory_order_relaxed); }

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      kt.axpy(arow[p], b + p * n, crow, n);
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto& kt = active();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      kt.axpy(arow[i], brow, c + i * n, n);
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto& kt = active();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += kt.dot(arow, b + j * k, k);
  }
}

}  // namespace ecm_sphere::kernels
