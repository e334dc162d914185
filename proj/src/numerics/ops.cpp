#include "ctl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"

namespace ctl {

namespace detail {

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

std::vector<std::size_t> topk_indices(const double* row, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void softmax_inplace(double* row, std::size_t n, const std::uint8_t* allowed) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!allowed || allowed[j]) mx = std::max(mx, row[j]);
  }
  if (!std::isfinite(mx)) {
    std::fill(row, row + n, 0.0);
    return;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (allowed && !allowed[j]) {
      row[j] = 0.0;
      continue;
    }
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t batch = a.size() / (m * k);
  const bool batched_b = b.rank() > 2;
  if (batched_b) {
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2)) {
      throw DimensionError("matmul leading dimensions differ: " + shape_string(a.shape()) + " x " +
                           shape_string(b.shape()));
    }
  }
  Tensor::Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* bs = b.data() + (batched_b ? s * k * n : 0);
    kernels::gemm_nn(m, n, k, a.data() + s * m * k, k, bs, n, out.data() + s * m * n, n);
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.empty() || x.cols() == 0) throw DimensionError("softmax_rows: empty last axis");
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) detail::softmax_inplace(out.row(r), out.cols());
  return out;
}

Tensor topk_mask(const Tensor& x, std::size_t k) {
  const std::size_t n = x.cols();
  if (k == 0 || k > n) {
    throw ParameterError("topk_mask: k must be in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  }
  Tensor mask = Tensor::zeros_like(x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j : detail::topk_indices(x.row(r), n, k)) mask.row(r)[j] = 1.0;
  }
  return mask;
}

Tensor masked_softmax_rows(const Tensor& x, const Tensor& mask) {
  require_same_shape(x, mask, "masked_softmax_rows");
  Tensor out = x;
  std::vector<std::uint8_t> allowed(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) allowed[j] = mask.row(r)[j] != 0.0;
    detail::softmax_inplace(out.row(r), out.cols(), allowed.data());
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = detail::sigmoid(v);
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::tanh(v);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " do not match feature width of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(std::max(var, eps));
    double* yr = out.row(r);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
  }
  return out;
}

}  // namespace ctl
