#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ctl/tensor.hpp"

namespace ctl {

inline constexpr double kLayerNormEps = 1e-5;

// a[m,k] . b[k,n]. Rank-3/4 `a` with rank-2 `b` applies b to every leading
// slice; equal-rank operands multiply slice by slice.
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax over the last axis with max subtraction.
Tensor softmax_rows(const Tensor& x);

// {0,1} mask with exactly k ones per last-axis row at the k largest entries.
// Ties go to the lower index.
Tensor topk_mask(const Tensor& x, std::size_t k);

// Softmax over the entries where mask != 0; masked entries get probability 0.
Tensor masked_softmax_rows(const Tensor& x, const Tensor& mask);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

namespace detail {
double sigmoid(double v);
// Indices of the k largest values of row[0..n), lower index first on ties,
// returned in ascending index order.
std::vector<std::size_t> topk_indices(const double* row, std::size_t n, std::size_t k);
// In-place softmax of row[0..n) restricted to allowed entries (allowed may be null).
void softmax_inplace(double* row, std::size_t n, const std::uint8_t* allowed = nullptr);
}  // namespace detail

}  // namespace ctl
