#include "ctl/kernels.hpp"

namespace ctl::kernels::detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      if (aip == 0.0) continue;
      axpy_scalar(aip, b + p * ldb, ci, n);
    }
  }
}

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot_scalar(a + i * lda, b + j * ldb, k);
    }
  }
}

void gemm_tn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * lda;
    const double* bp = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      if (ap[i] == 0.0) continue;
      axpy_scalar(ap[i], bp, c + i * ldc, n);
    }
  }
}

}  // namespace

const KernelTable kScalarTable{Backend::Scalar, dot_scalar, axpy_scalar, gemm_nn_scalar, gemm_nt_scalar,
                               gemm_tn_scalar};

}  // namespace ctl::kernels::detail
