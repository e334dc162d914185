#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ctl/ablation.hpp"
#include "ctl/dataset.hpp"
#include "ctl/fusion.hpp"
#include "ctl/generator.hpp"
#include "ctl/nn.hpp"
#include "ctl/predictor.hpp"
#include "ctl/text_encoder.hpp"

namespace ctl {

struct ModelConfig {
  std::size_t n_nodes = 8;
  std::size_t channels = 1;
  std::size_t window = 12;
  std::size_t patch = 4;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t text_length = 16;
  std::size_t vocab = 0;
  std::size_t top_k = 0;  // 0: default_top_k(text_length)
  std::size_t node_embed_dim = 8;
  std::size_t detector_hidden = 16;
  std::size_t decoder_layers = 2;
  std::size_t lora_rank = 12;
  double lora_alpha = 24.0;
  double lora_dropout = 0.1;
  std::size_t memory_slots = 16;
  double eta = kFilmEta;
  AblationFlags flags;
  // Generator sees ground-truth future traffic during training.
  bool teacher_forcing = true;

  std::size_t effective_top_k() const { return top_k ? top_k : default_top_k(text_length); }
  PredictorConfig predictor() const;
  GeneratorConfig generator() const;
  void validate() const;  // throws ConfigError
};

struct ModelParams {
  TextEncoderParams text;
  FusionParams fusion;
  PredictorParams predictor;
  GeneratorParams generator;

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  // Stable order; names are unique. Gradient structs list identically.
  ParamList collect();
  std::size_t count();
};

// Top-K alignment mask and top-30% selection of one sample, recorded so a
// finite-difference probe can hold them fixed.
struct SampleMasks {
  std::vector<std::uint8_t> align;
  std::vector<std::size_t> selected;
};

struct BatchLoss {
  double total = 0.0;
  double mse = 0.0;
  double ce = 0.0;
};

struct LossOptions {
  double lambda_text = 0.5;
  RngState* dropout_rng = nullptr;            // training mode when set
  std::vector<SampleMasks>* masks = nullptr;  // recorded, or replayed when fixed
  bool masks_fixed = false;
  bool freeze_decoder_base = false;
};

// Mean MSE over all forecast entries plus lambda times mean CE over non-PAD
// targets. Samples hold normalized tensors. grad (optional) is accumulated.
BatchLoss batch_loss(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                     const std::vector<const Sample*>& batch, const LossOptions& opts, ModelParams* grad);

// Inference on one normalized sample.
Tensor forecast_sample(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                       const Sample& sample);
// Per-node generator features [N, t*C] from a [t,N,C] tensor.
Tensor traffic_features(const Tensor& y);

struct Description {
  TokenSequence tokens;
  std::vector<std::size_t> selected;
};
Description describe_sample(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                            const Tensor& traffic /*[t,N,C] normalized*/);

}  // namespace ctl
