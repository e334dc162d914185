#include "ctl/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/ops.hpp"

namespace ctl::nn {

void linear_forward(const double* x, std::size_t m, const Tensor& w, const Tensor* b, double* y) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    double* yi = y + i * out;
    if (b) {
      std::copy(b->data(), b->data() + out, yi);
    } else {
      std::fill(yi, yi + out, 0.0);
    }
  }
  kernels::gemm_nn(m, out, in, x, in, w.data(), out, y, out);
}

void linear_backward(const double* x, std::size_t m, const Tensor& w, const double* dy, double* dx, Tensor& dw,
                     Tensor* db) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (dx) kernels::gemm_nt(m, in, out, dy, out, w.data(), out, dx, in);
  kernels::gemm_tn(in, out, m, x, in, dy, out, dw.data(), out);
  if (db) {
    for (std::size_t i = 0; i < m; ++i) kernels::axpy(1.0, dy + i * out, db->data(), out);
  }
}

void layer_norm_forward(const double* x, std::size_t rows, std::size_t d, const Tensor& gain, const Tensor& bias,
                        double eps, double* y, LayerNormCache& cache) {
  cache.xhat.resize(rows * d);
  cache.rstd.resize(rows);
  cache.clamped.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    cache.clamped[r] = var < eps;
    const double rstd = 1.0 / std::sqrt(std::max(var, eps));
    cache.rstd[r] = rstd;
    double* xh = cache.xhat.data() + r * d;
    double* yr = y + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mean) * rstd;
      yr[j] = xh[j] * gain[j] + bias[j];
    }
  }
}

void layer_norm_backward(const double* dy, std::size_t rows, std::size_t d, const Tensor& gain,
                         const LayerNormCache& cache, double* dx, Tensor& dgain, Tensor& dbias) {
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dyr = dy + r * d;
    const double* xh = cache.xhat.data() + r * d;
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dyr[j] * gain[j];
      dgain[j] += dyr[j] * xh[j];
      dbias[j] += dyr[j];
      mean_g += g;
      mean_gx += g * xh[j];
    }
    mean_g *= inv_d;
    mean_gx *= inv_d;
    if (cache.clamped[r]) mean_gx = 0.0;
    double* dxr = dx + r * d;
    const double rstd = cache.rstd[r];
    for (std::size_t j = 0; j < d; ++j) {
      dxr[j] += rstd * (dyr[j] * gain[j] - mean_g - xh[j] * mean_gx);
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v, const AttentionDims& dims,
                       const std::uint8_t* allowed, bool causal, double* out, double* probs) {
  const std::size_t dh = dims.d / dims.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::fill(out, out + dims.sq * dims.d, 0.0);
  std::vector<std::uint8_t> row_mask(dims.sk);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    double* p = probs + h * dims.sq * dims.sk;
    std::fill(p, p + dims.sq * dims.sk, 0.0);
    kernels::gemm_nt(dims.sq, dims.sk, dh, q + h * dh, dims.d, k + h * dh, dims.d, p, dims.sk);
    for (std::size_t i = 0; i < dims.sq; ++i) {
      double* pi = p + i * dims.sk;
      for (std::size_t j = 0; j < dims.sk; ++j) {
        pi[j] *= scale;
        bool ok = !causal || j <= i;
        if (allowed) ok = ok && allowed[i * dims.sk + j];
        row_mask[j] = ok;
      }
      ctl::detail::softmax_inplace(pi, dims.sk, row_mask.data());
    }
    kernels::gemm_nn(dims.sq, dh, dims.sk, p, dims.sk, v + h * dh, dims.d, out + h * dh, dims.d);
  }
}

void attention_backward(const double* q, const double* k, const double* v, const AttentionDims& dims,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv) {
  const std::size_t dh = dims.d / dims.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> ds(dims.sq * dims.sk);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const double* p = probs + h * dims.sq * dims.sk;
    // dV += P^T dO
    kernels::gemm_tn(dims.sk, dh, dims.sq, p, dims.sk, dout + h * dh, dims.d, dv + h * dh, dims.d);
    // dP = dO V^T
    std::fill(ds.begin(), ds.end(), 0.0);
    kernels::gemm_nt(dims.sq, dims.sk, dh, dout + h * dh, dims.d, v + h * dh, dims.d, ds.data(), dims.sk);
    for (std::size_t i = 0; i < dims.sq; ++i) {
      const double* pi = p + i * dims.sk;
      double* di = ds.data() + i * dims.sk;
      const double dot = kernels::dot(pi, di, dims.sk);
      for (std::size_t j = 0; j < dims.sk; ++j) di[j] = pi[j] * (di[j] - dot) * scale;
    }
    kernels::gemm_nn(dims.sq, dh, dims.sk, ds.data(), dims.sk, k + h * dh, dims.d, dq + h * dh, dims.d);
    kernels::gemm_tn(dims.sk, dh, dims.sq, ds.data(), dims.sk, q + h * dh, dims.d, dk + h * dh, dims.d);
  }
}

MhaWeights MhaWeights::zeros(std::size_t d) {
  return MhaWeights{Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), Tensor({d, d})};
}

void MhaWeights::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".wq", &wq});
  out.push_back({prefix + ".wk", &wk});
  out.push_back({prefix + ".wv", &wv});
  out.push_back({prefix + ".wo", &wo});
}

void mha_forward(const MhaWeights& w, const double* xq, std::size_t sq, const double* xkv, std::size_t sk,
                 std::size_t heads, const std::uint8_t* allowed, bool causal, double* out, MhaCache& cache) {
  const std::size_t d = w.wq.dim(0);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  cache.q.resize(sq * d);
  cache.k.resize(sk * d);
  cache.v.resize(sk * d);
  cache.ctx.resize(sq * d);
  cache.probs.resize(heads * sq * sk);
  linear_forward(xq, sq, w.wq, nullptr, cache.q.data());
  linear_forward(xkv, sk, w.wk, nullptr, cache.k.data());
  linear_forward(xkv, sk, w.wv, nullptr, cache.v.data());
  attention_forward(cache.q.data(), cache.k.data(), cache.v.data(), {sq, sk, d, heads}, allowed, causal,
                    cache.ctx.data(), cache.probs.data());
  linear_forward(cache.ctx.data(), sq, w.wo, nullptr, out);
}

void mha_backward(const MhaWeights& w, const double* xq, std::size_t sq, const double* xkv, std::size_t sk,
                  std::size_t heads, const MhaCache& cache, const double* dout, double* dxq, double* dxkv,
                  MhaWeights& grad) {
  const std::size_t d = w.wq.dim(0);
  Buffer dctx(sq * d, 0.0), dq(sq * d, 0.0), dk(sk * d, 0.0), dv(sk * d, 0.0);
  linear_backward(cache.ctx.data(), sq, w.wo, dout, dctx.data(), grad.wo, nullptr);
  attention_backward(cache.q.data(), cache.k.data(), cache.v.data(), {sq, sk, d, heads}, cache.probs.data(),
                     dctx.data(), dq.data(), dk.data(), dv.data());
  linear_backward(xq, sq, w.wq, dq.data(), dxq, grad.wq, nullptr);
  linear_backward(xkv, sk, w.wk, dk.data(), dxkv, grad.wk, nullptr);
  linear_backward(xkv, sk, w.wv, dv.data(), dxkv, grad.wv, nullptr);
}

void lora_forward(const double* x, std::size_t m, const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                  const Buffer* keep, double* y, LoraCache& cache) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  const std::size_t r = a.dim(0);
  linear_forward(x, m, w, nullptr, y);
  cache.u.assign(m * r, 0.0);
  kernels::gemm_nt(m, r, in, x, in, a.data(), in, cache.u.data(), r);
  if (keep) {
    cache.keep = *keep;
  } else {
    cache.keep.clear();
  }
  Buffer ud = cache.u;
  if (!cache.keep.empty()) {
    for (std::size_t i = 0; i < ud.size(); ++i) ud[i] *= cache.keep[i];
  }
  for (double& val : ud) val *= scale;
  kernels::gemm_nt(m, out, r, ud.data(), r, b.data(), r, y, out);
}

void lora_backward(const double* x, std::size_t m, const Tensor& w, const Tensor& a, const Tensor& b, double scale,
                   const LoraCache& cache, const double* dy, double* dx, Tensor& dw, Tensor& da, Tensor& db) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  const std::size_t r = a.dim(0);
  linear_backward(x, m, w, dy, dx, dw, nullptr);
  Buffer ud = cache.u;
  if (!cache.keep.empty()) {
    for (std::size_t i = 0; i < ud.size(); ++i) ud[i] *= cache.keep[i];
  }
  for (double& val : ud) val *= scale;
  // db[out,r] += dy^T ud
  kernels::gemm_tn(out, r, m, dy, out, ud.data(), r, db.data(), r);
  // d(ud) = dy b, then undo scale/dropout to reach du
  Buffer du(m * r, 0.0);
  kernels::gemm_nn(m, r, out, dy, out, b.data(), r, du.data(), r);
  for (std::size_t i = 0; i < du.size(); ++i) {
    du[i] *= scale;
    if (!cache.keep.empty()) du[i] *= cache.keep[i];
  }
  // u = x a^T  ->  da[r,in] += du^T x ; dx += du a
  kernels::gemm_tn(r, in, m, du.data(), r, x, in, da.data(), in);
  if (dx) kernels::gemm_nn(m, in, r, du.data(), r, a.data(), in, dx, in);
}

void add_sinusoidal(double* x, std::size_t rows, std::size_t d, std::size_t offset) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(offset + r);
    for (std::size_t j = 0; j < d; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
      x[r * d + j] += std::sin(pos * freq);
      if (j + 1 < d) x[r * d + j + 1] += std::cos(pos * freq);
    }
  }
}

}  // namespace ctl::nn
