#include "ctl/text_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/ops.hpp"

namespace ctl {

TextEncoderParams TextEncoderParams::zeros(std::size_t vocab, std::size_t dim) {
  TextEncoderParams p;
  p.embedding = Tensor({vocab, dim});
  p.local_conv = Tensor({dim, dim, kLocalKernel});
  p.depthwise = Tensor({dim, kGlobalKernel});
  p.pointwise = Tensor({dim, dim});
  p.fuse = Tensor({2 * dim, dim});
  p.fuse_bias = Tensor({dim});
  p.ln_gain = Tensor({dim});
  p.ln_bias = Tensor({dim});
  return p;
}

TextEncoderParams TextEncoderParams::init(std::size_t vocab, std::size_t dim, RngState& rng) {
  const double d = static_cast<double>(dim);
  TextEncoderParams p;
  p.embedding = random_normal({vocab, dim}, 1.0 / std::sqrt(d), rng);
  p.local_conv = random_normal({dim, dim, kLocalKernel}, 1.0 / std::sqrt(d * kLocalKernel), rng);
  p.depthwise = random_normal({dim, kGlobalKernel}, 1.0 / std::sqrt(double(kGlobalKernel)), rng);
  p.pointwise = random_normal({dim, dim}, 1.0 / std::sqrt(d), rng);
  p.fuse = random_normal({2 * dim, dim}, 1.0 / std::sqrt(2.0 * d), rng);
  p.fuse_bias = Tensor({dim});
  p.ln_gain = Tensor::full({dim}, 1.0);
  p.ln_bias = Tensor({dim});
  return p;
}

void TextEncoderParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".embedding", &embedding});
  out.push_back({prefix + ".local_conv", &local_conv});
  out.push_back({prefix + ".depthwise", &depthwise});
  out.push_back({prefix + ".pointwise", &pointwise});
  out.push_back({prefix + ".fuse", &fuse});
  out.push_back({prefix + ".fuse_bias", &fuse_bias});
  out.push_back({prefix + ".ln_gain", &ln_gain});
  out.push_back({prefix + ".ln_bias", &ln_bias});
}

void text_encoder_forward(const TextEncoderParams& p, const TokenId* ids, std::size_t length, double* out,
                          TextEncoderCache& cache) {
  const std::size_t d = p.dim();
  const std::size_t v = p.vocab();
  const std::size_t L = length;
  cache.ids.assign(ids, ids + L);
  cache.keep.assign(L, 0);
  cache.emb.assign(L * d, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    if (ids[l] < 0 || static_cast<std::size_t>(ids[l]) >= v) {
      throw ParameterError("text encoder: token id " + std::to_string(ids[l]) + " outside vocabulary of " +
                           std::to_string(v));
    }
    if (ids[l] == kPad) continue;
    cache.keep[l] = 1;
    std::copy(p.embedding.row(ids[l]), p.embedding.row(ids[l]) + d, cache.emb.data() + l * d);
  }

  // local: cat[l, o] = sum_i sum_k W[o,i,k] emb[l+k-1, i]
  cache.cat.assign(L * 2 * d, 0.0);
  const int half_l = static_cast<int>(kLocalKernel / 2);
  for (std::size_t l = 0; l < L; ++l) {
    double* dst = cache.cat.data() + l * 2 * d;
    for (std::size_t k = 0; k < kLocalKernel; ++k) {
      const long src = static_cast<long>(l) + static_cast<long>(k) - half_l;
      if (src < 0 || src >= static_cast<long>(L)) continue;
      const double* e = cache.emb.data() + src * d;
      for (std::size_t o = 0; o < d; ++o) {
        const double* w = p.local_conv.data() + (o * d) * kLocalKernel + k;
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += w[i * kLocalKernel] * e[i];
        dst[o] += acc;
      }
    }
  }

  // global: depthwise kernel 5 then pointwise
  cache.depth.assign(L * d, 0.0);
  const int half_g = static_cast<int>(kGlobalKernel / 2);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t k = 0; k < kGlobalKernel; ++k) {
      const long src = static_cast<long>(l) + static_cast<long>(k) - half_g;
      if (src < 0 || src >= static_cast<long>(L)) continue;
      for (std::size_t i = 0; i < d; ++i) {
        cache.depth[l * d + i] += p.depthwise.at(i, k) * cache.emb[src * d + i];
      }
    }
  }
  kernels::gemm_nn(L, d, d, cache.depth.data(), d, p.pointwise.data(), d, cache.cat.data() + d, 2 * d);

  nn::Buffer fused(L * d);
  nn::linear_forward(cache.cat.data(), L, p.fuse, &p.fuse_bias, fused.data());
  nn::layer_norm_forward(fused.data(), L, d, p.ln_gain, p.ln_bias, kLayerNormEps, out, cache.ln);
  for (std::size_t l = 0; l < L; ++l) {
    if (!cache.keep[l]) std::fill(out + l * d, out + (l + 1) * d, 0.0);
  }
}

void text_encoder_backward(const TextEncoderParams& p, const TextEncoderCache& cache, const double* dout,
                           TextEncoderParams& grad) {
  const std::size_t d = p.dim();
  const std::size_t L = cache.ids.size();
  nn::Buffer dy(dout, dout + L * d);
  for (std::size_t l = 0; l < L; ++l) {
    if (!cache.keep[l]) std::fill(dy.begin() + l * d, dy.begin() + (l + 1) * d, 0.0);
  }
  nn::Buffer dfused(L * d, 0.0);
  nn::layer_norm_backward(dy.data(), L, d, p.ln_gain, cache.ln, dfused.data(), grad.ln_gain, grad.ln_bias);
  nn::Buffer dcat(L * 2 * d, 0.0);
  nn::linear_backward(cache.cat.data(), L, p.fuse, dfused.data(), dcat.data(), grad.fuse, &grad.fuse_bias);

  nn::Buffer demb(L * d, 0.0);
  // pointwise: global = depth . pointwise
  nn::Buffer ddepth(L * d, 0.0);
  kernels::gemm_tn(d, d, L, cache.depth.data(), d, dcat.data() + d, 2 * d, grad.pointwise.data(), d);
  kernels::gemm_nt(L, d, d, dcat.data() + d, 2 * d, p.pointwise.data(), d, ddepth.data(), d);
  const int half_g = static_cast<int>(kGlobalKernel / 2);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t k = 0; k < kGlobalKernel; ++k) {
      const long src = static_cast<long>(l) + static_cast<long>(k) - half_g;
      if (src < 0 || src >= static_cast<long>(L)) continue;
      for (std::size_t i = 0; i < d; ++i) {
        grad.depthwise.at(i, k) += ddepth[l * d + i] * cache.emb[src * d + i];
        demb[src * d + i] += ddepth[l * d + i] * p.depthwise.at(i, k);
      }
    }
  }

  const int half_l = static_cast<int>(kLocalKernel / 2);
  for (std::size_t l = 0; l < L; ++l) {
    const double* dl = dcat.data() + l * 2 * d;
    for (std::size_t k = 0; k < kLocalKernel; ++k) {
      const long src = static_cast<long>(l) + static_cast<long>(k) - half_l;
      if (src < 0 || src >= static_cast<long>(L)) continue;
      const double* e = cache.emb.data() + src * d;
      double* de = demb.data() + src * d;
      for (std::size_t o = 0; o < d; ++o) {
        const double g = dl[o];
        if (g == 0.0) continue;
        const std::size_t base = (o * d) * kLocalKernel + k;
        for (std::size_t i = 0; i < d; ++i) {
          grad.local_conv[base + i * kLocalKernel] += g * e[i];
          de[i] += g * p.local_conv[base + i * kLocalKernel];
        }
      }
    }
  }

  for (std::size_t l = 0; l < L; ++l) {
    if (!cache.keep[l]) continue;
    kernels::axpy(1.0, demb.data() + l * d, grad.embedding.row(cache.ids[l]), d);
  }
}

Tensor encode_text(const std::vector<TokenSequence>& batch, const TextEncoderParams& p) {
  if (batch.empty()) throw DimensionError("encode_text: empty batch");
  const std::size_t L = batch.front().size();
  const std::size_t d = p.dim();
  Tensor out({batch.size(), L, d});
  TextEncoderCache cache;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].size() != L) throw DimensionError("encode_text: sequences differ in length");
    text_encoder_forward(p, batch[b].ids.data(), L, out.data() + b * L * d, cache);
  }
  return out;
}

}  // namespace ctl
