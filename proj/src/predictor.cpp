#include "ctl/predictor.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/ops.hpp"

namespace ctl {

void PredictorConfig::validate() const {
  if (channels == 0 || window == 0 || patch == 0 || dim == 0 || blocks == 0) {
    throw ConfigError("predictor: sizes must be positive");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("predictor: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

void StageParams::collect(ParamList& out, const std::string& prefix) {
  attn.collect(out, prefix + ".attn");
  out.push_back({prefix + ".ln_gain", &ln_gain});
  out.push_back({prefix + ".ln_bias", &ln_bias});
}

namespace {

StageParams stage_zeros(std::size_t d) { return StageParams{nn::MhaWeights::zeros(d), Tensor({d}), Tensor({d})}; }

StageParams stage_init(std::size_t d, RngState& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return StageParams{
      nn::MhaWeights{random_normal({d, d}, s, rng), random_normal({d, d}, s, rng), random_normal({d, d}, s, rng),
                     random_normal({d, d}, s, rng)},
      Tensor::full({d}, 1.0), Tensor({d})};
}

}  // namespace

PredictorParams PredictorParams::zeros(const PredictorConfig& cfg) {
  const std::size_t d = cfg.dim;
  const std::size_t pc = cfg.patch * cfg.channels;
  PredictorParams p;
  p.patch_w = Tensor({pc, d});
  p.patch_b = Tensor({d});
  for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back({stage_zeros(d), stage_zeros(d)});
  p.queries = Tensor({cfg.patches(), d});
  p.decoder = stage_zeros(d);
  p.head_w = Tensor({d, pc});
  p.head_b = Tensor({pc});
  return p;
}

PredictorParams PredictorParams::init(const PredictorConfig& cfg, RngState& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t pc = cfg.patch * cfg.channels;
  PredictorParams p;
  p.patch_w = random_normal({pc, d}, 1.0 / std::sqrt(static_cast<double>(pc)), rng);
  p.patch_b = Tensor({d});
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    StageParams t = stage_init(d, rng);
    StageParams s = stage_init(d, rng);
    p.blocks.push_back({std::move(t), std::move(s)});
  }
  p.queries = random_normal({cfg.patches(), d}, 1.0, rng);
  p.decoder = stage_init(d, rng);
  p.head_w = random_normal({d, pc}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.head_b = Tensor({pc});
  return p;
}

void PredictorParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".patch_w", &patch_w});
  out.push_back({prefix + ".patch_b", &patch_b});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = prefix + ".block" + std::to_string(i);
    blocks[i].temporal.collect(out, b + ".temporal");
    blocks[i].spatial.collect(out, b + ".spatial");
  }
  out.push_back({prefix + ".queries", &queries});
  decoder.collect(out, prefix + ".decoder");
  out.push_back({prefix + ".head_w", &head_w});
  out.push_back({prefix + ".head_b", &head_b});
}

namespace predictor {

namespace {

// Patch rows [P*N, p*C] with zero padding past the window.
nn::Buffer patch_rows(const PredictorConfig& cfg, const double* x, std::size_t n) {
  const std::size_t c = cfg.channels;
  const std::size_t np = cfg.patches();
  const std::size_t pc = cfg.patch * c;
  nn::Buffer rows(np * n * pc, 0.0);
  for (std::size_t pi = 0; pi < np; ++pi) {
    for (std::size_t j = 0; j < n; ++j) {
      double* dst = rows.data() + (pi * n + j) * pc;
      for (std::size_t tau = 0; tau < cfg.patch; ++tau) {
        const std::size_t t = pi * cfg.patch + tau;
        if (t >= cfg.window) break;
        for (std::size_t k = 0; k < c; ++k) dst[tau * c + k] = x[(t * n + j) * c + k];
      }
    }
  }
  return rows;
}

}  // namespace

void patch_embed_forward(const PredictorConfig& cfg, const PredictorParams& p, const double* x, std::size_t n,
                         double* h) {
  const std::size_t np = cfg.patches();
  const std::size_t d = cfg.dim;
  const nn::Buffer rows = patch_rows(cfg, x, n);
  nn::linear_forward(rows.data(), np * n, p.patch_w, &p.patch_b, h);
  nn::Buffer pe(np * d, 0.0);
  nn::add_sinusoidal(pe.data(), np, d);
  for (std::size_t pi = 0; pi < np; ++pi) {
    for (std::size_t j = 0; j < n; ++j) kernels::axpy(1.0, pe.data() + pi * d, h + (pi * n + j) * d, d);
  }
}

void patch_embed_backward(const PredictorConfig& cfg, const PredictorParams& p, const double* x, std::size_t n,
                          const double* dh, PredictorParams& grad) {
  const nn::Buffer rows = patch_rows(cfg, x, n);
  nn::linear_backward(rows.data(), cfg.patches() * n, p.patch_w, dh, nullptr, grad.patch_w, &grad.patch_b);
}

void stage_forward(const StageParams& p, std::size_t heads, const double* x, double* y, std::size_t count,
                   std::size_t s, std::size_t d, std::size_t stride_seq, std::size_t stride_row, StageCache& cache) {
  cache.input.resize(count);
  cache.mha.resize(count);
  cache.ln.resize(count);
  nn::Buffer att(s * d), z(s * d), out(s * d);
  for (std::size_t i = 0; i < count; ++i) {
    nn::Buffer& in = cache.input[i];
    in.resize(s * d);
    for (std::size_t r = 0; r < s; ++r) {
      const double* src = x + (i * stride_seq + r * stride_row) * d;
      std::copy(src, src + d, in.data() + r * d);
    }
    nn::mha_forward(p.attn, in.data(), s, in.data(), s, heads, nullptr, false, att.data(), cache.mha[i]);
    for (std::size_t k = 0; k < s * d; ++k) z[k] = in[k] + att[k];
    nn::layer_norm_forward(z.data(), s, d, p.ln_gain, p.ln_bias, kLayerNormEps, out.data(), cache.ln[i]);
    for (std::size_t r = 0; r < s; ++r) {
      std::copy(out.data() + r * d, out.data() + (r + 1) * d, y + (i * stride_seq + r * stride_row) * d);
    }
  }
}

void stage_backward(const StageParams& p, std::size_t heads, const double* dy, double* dx, std::size_t count,
                    std::size_t s, std::size_t d, std::size_t stride_seq, std::size_t stride_row,
                    const StageCache& cache, StageParams& grad) {
  nn::Buffer dout(s * d), dz(s * d), din(s * d);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t r = 0; r < s; ++r) {
      const double* src = dy + (i * stride_seq + r * stride_row) * d;
      std::copy(src, src + d, dout.data() + r * d);
    }
    std::fill(dz.begin(), dz.end(), 0.0);
    nn::layer_norm_backward(dout.data(), s, d, p.ln_gain, cache.ln[i], dz.data(), grad.ln_gain, grad.ln_bias);
    din = dz;
    const nn::Buffer& in = cache.input[i];
    nn::mha_backward(p.attn, in.data(), s, in.data(), s, heads, cache.mha[i], dz.data(), din.data(), din.data(),
                     grad.attn);
    for (std::size_t r = 0; r < s; ++r) {
      double* dst = dx + (i * stride_seq + r * stride_row) * d;
      kernels::axpy(1.0, din.data() + r * d, dst, d);
    }
  }
}

void block_forward(const PredictorConfig& cfg, const BlockParams& p, const double* x, double* y, std::size_t n,
                   BlockCache& cache) {
  const std::size_t np = cfg.patches();
  const std::size_t d = cfg.dim;
  cache.mid.assign(np * n * d, 0.0);
  // stage 1: along patches, one sequence per node
  stage_forward(p.temporal, cfg.heads, x, cache.mid.data(), n, np, d, 1, n, cache.temporal);
  // stage 2: along nodes, one sequence per patch
  stage_forward(p.spatial, cfg.heads, cache.mid.data(), y, np, n, d, n, 1, cache.spatial);
}

void block_backward(const PredictorConfig& cfg, const BlockParams& p, const double* dy, double* dx, std::size_t n,
                    const BlockCache& cache, BlockParams& grad) {
  const std::size_t np = cfg.patches();
  const std::size_t d = cfg.dim;
  nn::Buffer dmid(np * n * d, 0.0);
  stage_backward(p.spatial, cfg.heads, dy, dmid.data(), np, n, d, n, 1, cache.spatial, grad.spatial);
  stage_backward(p.temporal, cfg.heads, dmid.data(), dx, n, np, d, 1, n, cache.temporal, grad.temporal);
}

void encode_decode_forward(const PredictorConfig& cfg, const PredictorParams& p, const double* h, std::size_t n,
                           double* y, EncoderCache& cache) {
  const std::size_t np = cfg.patches();
  const std::size_t d = cfg.dim;
  const std::size_t sz = np * n * d;
  const std::size_t nb = p.blocks.size();
  cache.acts.assign(nb + 1, nn::Buffer(sz));
  cache.blocks.resize(nb);
  std::copy(h, h + sz, cache.acts[0].begin());
  for (std::size_t b = 0; b < nb; ++b) {
    block_forward(cfg, p.blocks[b], cache.acts[b].data(), cache.acts[b + 1].data(), n, cache.blocks[b]);
  }
  const nn::Buffer& enc = cache.acts[nb];

  HeadCache& hc = cache.head;
  hc.memory.assign(n, nn::Buffer(np * d));
  hc.mha.resize(n);
  hc.ln.resize(n);
  hc.decoded.assign(n, nn::Buffer(np * d));
  const std::size_t c = cfg.channels;
  const std::size_t pc = cfg.patch * c;
  nn::Buffer att(np * d), z(np * d), o(np * pc);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t pi = 0; pi < np; ++pi) {
      std::copy(enc.data() + (pi * n + j) * d, enc.data() + (pi * n + j + 1) * d, hc.memory[j].data() + pi * d);
    }
    nn::mha_forward(p.decoder.attn, p.queries.data(), np, hc.memory[j].data(), np, cfg.heads, nullptr, false,
                    att.data(), hc.mha[j]);
    for (std::size_t k = 0; k < np * d; ++k) z[k] = p.queries[k] + att[k];
    nn::layer_norm_forward(z.data(), np, d, p.decoder.ln_gain, p.decoder.ln_bias, kLayerNormEps,
                           hc.decoded[j].data(), hc.ln[j]);
    nn::linear_forward(hc.decoded[j].data(), np, p.head_w, &p.head_b, o.data());
    for (std::size_t pi = 0; pi < np; ++pi) {
      for (std::size_t tau = 0; tau < cfg.patch; ++tau) {
        const std::size_t t = pi * cfg.patch + tau;
        if (t >= cfg.window) break;
        for (std::size_t k = 0; k < c; ++k) y[(t * n + j) * c + k] = o[pi * pc + tau * c + k];
      }
    }
  }
}

void encode_decode_backward(const PredictorConfig& cfg, const PredictorParams& p, const double* dy, std::size_t n,
                            const EncoderCache& cache, double* dh, PredictorParams& grad) {
  const std::size_t np = cfg.patches();
  const std::size_t d = cfg.dim;
  const std::size_t sz = np * n * d;
  const std::size_t c = cfg.channels;
  const std::size_t pc = cfg.patch * c;
  const HeadCache& hc = cache.head;
  nn::Buffer denc(sz, 0.0);
  nn::Buffer dout(np * pc), du(np * d), dz(np * d), dmem(np * d);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(dout.begin(), dout.end(), 0.0);
    for (std::size_t pi = 0; pi < np; ++pi) {
      for (std::size_t tau = 0; tau < cfg.patch; ++tau) {
        const std::size_t t = pi * cfg.patch + tau;
        if (t >= cfg.window) break;
        for (std::size_t k = 0; k < c; ++k) dout[pi * pc + tau * c + k] = dy[(t * n + j) * c + k];
      }
    }
    std::fill(du.begin(), du.end(), 0.0);
    nn::linear_backward(hc.decoded[j].data(), np, p.head_w, dout.data(), du.data(), grad.head_w, &grad.head_b);
    std::fill(dz.begin(), dz.end(), 0.0);
    nn::layer_norm_backward(du.data(), np, d, p.decoder.ln_gain, hc.ln[j], dz.data(), grad.decoder.ln_gain,
                            grad.decoder.ln_bias);
    kernels::axpy(1.0, dz.data(), grad.queries.data(), np * d);
    std::fill(dmem.begin(), dmem.end(), 0.0);
    nn::mha_backward(p.decoder.attn, p.queries.data(), np, hc.memory[j].data(), np, cfg.heads, hc.mha[j], dz.data(),
                     grad.queries.data(), dmem.data(), grad.decoder.attn);
    for (std::size_t pi = 0; pi < np; ++pi) {
      kernels::axpy(1.0, dmem.data() + pi * d, denc.data() + (pi * n + j) * d, d);
    }
  }
  nn::Buffer dcur = std::move(denc);
  for (std::size_t b = p.blocks.size(); b-- > 0;) {
    nn::Buffer dprev(sz, 0.0);
    block_backward(cfg, p.blocks[b], dcur.data(), dprev.data(), n, cache.blocks[b], grad.blocks[b]);
    dcur = std::move(dprev);
  }
  kernels::axpy(1.0, dcur.data(), dh, sz);
}

}  // namespace predictor

Tensor patch_embed(const Tensor& x, const PredictorConfig& cfg, const PredictorParams& p) {
  if (x.rank() != 4 || x.dim(3) != cfg.channels) {
    throw DimensionError("patch_embed: expected [B,t,N,C] with C=" + std::to_string(cfg.channels) + ", got " +
                         shape_string(x.shape()));
  }
  PredictorConfig local = cfg;
  local.window = x.dim(1);
  const std::size_t bsz = x.dim(0), n = x.dim(2);
  const std::size_t np = local.patches();
  Tensor out({bsz, np, n, cfg.dim});
  const std::size_t in_sz = local.window * n * cfg.channels;
  for (std::size_t b = 0; b < bsz; ++b) {
    predictor::patch_embed_forward(local, p, x.data() + b * in_sz, n, out.data() + b * np * n * cfg.dim);
  }
  return out;
}

Tensor mhsa(const Tensor& x, const nn::MhaWeights& w, std::size_t heads) {
  if (x.rank() != 3 || x.dim(2) != w.wq.dim(0)) {
    throw DimensionError("mhsa: expected [B,S,D] matching the projections, got " + shape_string(x.shape()));
  }
  const std::size_t bsz = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor out(x.shape());
  nn::MhaCache cache;
  for (std::size_t b = 0; b < bsz; ++b) {
    const double* xb = x.data() + b * s * d;
    nn::mha_forward(w, xb, s, xb, s, heads, nullptr, false, out.data() + b * s * d, cache);
  }
  return out;
}

Tensor two_stage_block(const Tensor& x, const PredictorConfig& cfg, const BlockParams& p) {
  if (x.rank() != 4 || x.dim(3) != cfg.dim) {
    throw DimensionError("two_stage_block: expected [B,P,N,D], got " + shape_string(x.shape()));
  }
  PredictorConfig local = cfg;
  local.patch = 1;
  local.window = x.dim(1);
  const std::size_t bsz = x.dim(0), n = x.dim(2);
  const std::size_t sz = x.dim(1) * n * cfg.dim;
  Tensor out(x.shape());
  predictor::BlockCache cache;
  for (std::size_t b = 0; b < bsz; ++b) {
    predictor::block_forward(local, p, x.data() + b * sz, out.data() + b * sz, n, cache);
  }
  return out;
}

Tensor forecast_from_features(const Tensor& h, const PredictorConfig& cfg, const PredictorParams& p) {
  if (h.rank() != 4 || h.dim(1) != cfg.patches() || h.dim(3) != cfg.dim) {
    throw DimensionError("forecast: expected [B," + std::to_string(cfg.patches()) + ",N," +
                         std::to_string(cfg.dim) + "], got " + shape_string(h.shape()));
  }
  const std::size_t bsz = h.dim(0), n = h.dim(2);
  Tensor y({bsz, cfg.window, n, cfg.channels});
  predictor::EncoderCache cache;
  const std::size_t in_sz = cfg.patches() * n * cfg.dim;
  const std::size_t out_sz = cfg.window * n * cfg.channels;
  for (std::size_t b = 0; b < bsz; ++b) {
    predictor::encode_decode_forward(cfg, p, h.data() + b * in_sz, n, y.data() + b * out_sz, cache);
  }
  return y;
}

}  // namespace ctl
