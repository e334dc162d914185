#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctl/nn.hpp"
#include "ctl/rng.hpp"
#include "ctl/tensor.hpp"
#include "ctl/tokenizer.hpp"

namespace ctl {

inline constexpr std::size_t kLocalKernel = 3;
inline constexpr std::size_t kGlobalKernel = 5;

struct TextEncoderParams {
  Tensor embedding;   // [V,D]
  Tensor local_conv;  // [D_out,D_in,3]
  Tensor depthwise;   // [D,5]
  Tensor pointwise;   // [D_in,D_out]
  Tensor fuse;        // [2D,D]
  Tensor fuse_bias;   // [D]
  Tensor ln_gain;     // [D]
  Tensor ln_bias;     // [D]

  static TextEncoderParams zeros(std::size_t vocab, std::size_t dim);
  static TextEncoderParams init(std::size_t vocab, std::size_t dim, RngState& rng);
  std::size_t vocab() const { return embedding.dim(0); }
  std::size_t dim() const { return embedding.dim(1); }
  void collect(ParamList& out, const std::string& prefix);
};

struct TextEncoderCache {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> keep;  // 1 for non-PAD positions
  nn::Buffer emb;                  // [L,D], zero at PAD
  nn::Buffer cat;                  // [L,2D] local | global
  nn::Buffer depth;                // [L,D] depthwise output
  nn::LayerNormCache ln;
};

// One sequence: out [L,D].
void text_encoder_forward(const TextEncoderParams& p, const TokenId* ids, std::size_t length, double* out,
                          TextEncoderCache& cache);
void text_encoder_backward(const TextEncoderParams& p, const TextEncoderCache& cache, const double* dout,
                           TextEncoderParams& grad);

// Batch wrapper: [B,L] ids to H_text [B,L,D]. Throws ParameterError for ids >= V.
Tensor encode_text(const std::vector<TokenSequence>& batch, const TextEncoderParams& p);

}  // namespace ctl
