#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctl/nn.hpp"
#include "ctl/rng.hpp"
#include "ctl/tensor.hpp"

namespace ctl {

struct PredictorConfig {
  std::size_t channels = 1;
  std::size_t window = 12;  // t
  std::size_t patch = 4;    // p
  std::size_t dim = 32;     // D
  std::size_t heads = 2;
  std::size_t blocks = 2;   // n_b

  std::size_t patches() const { return (window + patch - 1) / patch; }
  void validate() const;  // throws ConfigError
};

// Attention sub-layer followed by residual and layer norm.
struct StageParams {
  nn::MhaWeights attn;
  Tensor ln_gain;
  Tensor ln_bias;

  void collect(ParamList& out, const std::string& prefix);
};

struct BlockParams {
  StageParams temporal;
  StageParams spatial;
};

struct PredictorParams {
  Tensor patch_w;  // [p*C, D]
  Tensor patch_b;  // [D]
  std::vector<BlockParams> blocks;
  Tensor queries;  // [P, D]
  StageParams decoder;
  Tensor head_w;  // [D, p*C]
  Tensor head_b;  // [p*C]

  static PredictorParams zeros(const PredictorConfig& cfg);
  static PredictorParams init(const PredictorConfig& cfg, RngState& rng);
  void collect(ParamList& out, const std::string& prefix);
};

namespace predictor {

// x [t,N,C] -> h [P,N,D] including the patch-index sinusoid.
void patch_embed_forward(const PredictorConfig& cfg, const PredictorParams& p, const double* x, std::size_t n,
                         double* h);
void patch_embed_backward(const PredictorConfig& cfg, const PredictorParams& p, const double* x, std::size_t n,
                          const double* dh, PredictorParams& grad);

struct StageCache {
  std::vector<nn::Buffer> input;  // per sequence, [S,D]
  std::vector<nn::MhaCache> mha;
  std::vector<nn::LayerNormCache> ln;
};

// Self-attention over `count` sequences of length s, each residual + layer norm.
// Sequence i, row r lives at x[(i*stride_seq + r*stride_row) * d].
void stage_forward(const StageParams& p, std::size_t heads, const double* x, double* y, std::size_t count,
                   std::size_t s, std::size_t d, std::size_t stride_seq, std::size_t stride_row, StageCache& cache);
void stage_backward(const StageParams& p, std::size_t heads, const double* dy, double* dx, std::size_t count,
                    std::size_t s, std::size_t d, std::size_t stride_seq, std::size_t stride_row,
                    const StageCache& cache, StageParams& grad);

struct BlockCache {
  StageCache temporal;
  StageCache spatial;
  nn::Buffer mid;  // after stage 1
};

// h [P,N,D] in place semantics: y may alias nothing.
void block_forward(const PredictorConfig& cfg, const BlockParams& p, const double* x, double* y, std::size_t n,
                   BlockCache& cache);
void block_backward(const PredictorConfig& cfg, const BlockParams& p, const double* dy, double* dx, std::size_t n,
                    const BlockCache& cache, BlockParams& grad);

struct HeadCache {
  std::vector<nn::Buffer> memory;  // per node [P,D]
  std::vector<nn::MhaCache> mha;
  std::vector<nn::LayerNormCache> ln;
  std::vector<nn::Buffer> decoded;  // per node [P,D] after layer norm
};

struct EncoderCache {
  std::vector<nn::Buffer> acts;  // input of each block, then encoder output
  std::vector<BlockCache> blocks;
  HeadCache head;
};

// h [P,N,D] (after fusion) -> y [t,N,C]
void encode_decode_forward(const PredictorConfig& cfg, const PredictorParams& p, const double* h, std::size_t n,
                           double* y, EncoderCache& cache);
void encode_decode_backward(const PredictorConfig& cfg, const PredictorParams& p, const double* dy, std::size_t n,
                            const EncoderCache& cache, double* dh, PredictorParams& grad);

}  // namespace predictor

// ---- batch forms ----

// x [B,t,N,C] -> [B,P,N,D]
Tensor patch_embed(const Tensor& x, const PredictorConfig& cfg, const PredictorParams& p);
// Multi-head self-attention with output projection on x [B,S,D] (no residual).
Tensor mhsa(const Tensor& x, const nn::MhaWeights& w, std::size_t heads);
// x [B,P,N,D] -> same shape
Tensor two_stage_block(const Tensor& x, const PredictorConfig& cfg, const BlockParams& p);
// Encoder blocks plus decoder on fused features [B,P,N,D]; returns [B,t,N,C].
Tensor forecast_from_features(const Tensor& h, const PredictorConfig& cfg, const PredictorParams& p);

}  // namespace ctl
