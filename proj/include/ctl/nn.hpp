#pragma once

// Differentiable building blocks on row-major buffers. Every backward routine
// accumulates into its gradient outputs so shared inputs can be summed.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctl/tensor.hpp"

namespace ctl {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedTensor>;

namespace nn {

using Buffer = std::vector<double>;

// y[m,out] = x[m,in] w[in,out] + b. y is overwritten.
void linear_forward(const double* x, std::size_t m, const Tensor& w, const Tensor* b, double* y);
// dx += dy w^T (skipped when dx is null), dw += x^T dy, db += colsum(dy).
void linear_backward(const double* x, std::size_t m, const Tensor& w, const double* dy, double* dx, Tensor& dw,
                     Tensor* db);

struct LayerNormCache {
  Buffer xhat;
  Buffer rstd;
  std::vector<std::uint8_t> clamped;
};
void layer_norm_forward(const double* x, std::size_t rows, std::size_t d, const Tensor& gain, const Tensor& bias,
                        double eps, double* y, LayerNormCache& cache);
void layer_norm_backward(const double* dy, std::size_t rows, std::size_t d, const Tensor& gain,
                         const LayerNormCache& cache, double* dx, Tensor& dgain, Tensor& dbias);

struct AttentionDims {
  std::size_t sq;
  std::size_t sk;
  std::size_t d;
  std::size_t heads;
};

// Scaled dot-product attention on column blocks of width d/heads.
// allowed (optional) is [sq, sk]; causal additionally hides j > i.
// probs receives heads*sq*sk weights; masked entries are exactly zero.
void attention_forward(const double* q, const double* k, const double* v, const AttentionDims& dims,
                       const std::uint8_t* allowed, bool causal, double* out, double* probs);
void attention_backward(const double* q, const double* k, const double* v, const AttentionDims& dims,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv);

// Multi-head attention with bias-free [d,d] projections.
struct MhaWeights {
  Tensor wq, wk, wv, wo;

  static MhaWeights zeros(std::size_t d);
  void collect(ParamList& out, const std::string& prefix);
};

struct MhaCache {
  Buffer q, k, v, probs, ctx;
};

void mha_forward(const MhaWeights& w, const double* xq, std::size_t sq, const double* xkv, std::size_t sk,
                 std::size_t heads, const std::uint8_t* allowed, bool causal, double* out, MhaCache& cache);
void mha_backward(const MhaWeights& w, const double* xq, std::size_t sq, const double* xkv, std::size_t sk,
                  std::size_t heads, const MhaCache& cache, const double* dout, double* dxq, double* dxkv,
                  MhaWeights& grad);

// Low-rank adapted projection: y = x w + scale * (keep ⊙ (x a^T)) b^T,
// with w [in,out], a [r,in], b [out,r]. keep holds per-element inverted-dropout
// multipliers for x a^T, or is null when dropout is off.
struct LoraCache {
  Buffer u;     // x a^T before dropout
  Buffer keep;  // empty when dropout is off
};
void lora_forward(const double* x, std::size_t m, const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                  const Buffer* keep, double* y, LoraCache& cache);
void lora_backward(const double* x, std::size_t m, const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                   const LoraCache& cache, const double* dy, double* dx, Tensor& dw, Tensor& da, Tensor& db);

// x[r, :] += PE(offset + r) using the sin/cos interleaved table.
void add_sinusoidal(double* x, std::size_t rows, std::size_t d, std::size_t offset = 0);

}  // namespace nn
}  // namespace ctl
