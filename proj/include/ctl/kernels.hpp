#pragma once

// Inner-loop kernels behind every dense product in the library.
//
// Each backend implements the same loop nest as the scalar reference; only the
// innermost contiguous loop is vectorized. Results therefore agree with the
// scalar path up to reassociation and fused multiply-add rounding, which the
// equivalence tests bound at 1e-12 relative.
//
// All gemm variants accumulate into C; callers clear C first when they want
// an assignment.

#include <cstddef>
#include <string_view>

namespace ctl::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct KernelTable {
  Backend backend;
  // sum_i a[i]*b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha*x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m,n] += A[m,k] B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m,n] += A[m,k] B[n,k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m,n] += A[k,m]^T B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

// Table for a specific backend, or nullptr when the host cannot run it.
const KernelTable* table(Backend backend);
bool supported(Backend backend);

// Best backend on this host, honouring CTL_KERNELS=scalar|avx2|neon.
Backend detect();

// Currently active table. Selection happens once at first use.
const KernelTable& active();
// Switch backends (tests, benchmarks). Not meant to race with running kernels.
void select(Backend backend);

std::string_view name(Backend backend);

// Convenience wrappers over active().
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}

namespace detail {
extern const KernelTable kScalarTable;
#if defined(CTL_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(CTL_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif
}  // namespace detail

}  // namespace ctl::kernels
