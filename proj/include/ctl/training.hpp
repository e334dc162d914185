#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctl/model.hpp"

namespace ctl {

struct TrainConfig {
  double lr = 3e-3;
  std::size_t batch = 4;
  std::size_t epochs = 10;
  std::size_t warmup_epochs = 1;
  double lambda_text = 0.5;
  std::uint64_t seed = 0;
  bool freeze_decoder_base = false;
  // Stop after this many optimizer steps when nonzero (the schedule still
  // spans the full run).
  std::size_t max_steps = 0;

  // lr 5e-5, 50 epochs, 5 warmup epochs.
  static TrainConfig full_scale();
  // Short desk runs: higher lr, 10 epochs, 1 warmup epoch.
  static TrainConfig desk();
  void validate() const;  // throws ConfigError
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState for_params(const ParamList& params);
};

// Bias-corrected Adam. params and grads are matched by position.
void adam_step(const ParamList& params, const ParamList& grads, AdamState& state, double lr);

// Linear 0 -> base over warmup_steps, then cosine base -> 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

// MSE(forecast, y) + lambda * mean(-logprob[target]) over non-PAD targets.
// token_logprobs is [S,V] of log-probabilities.
double joint_loss(const Tensor& forecast, const Tensor& y_true, const Tensor& token_logprobs,
                  std::span<const TokenId> token_targets, double lambda_text);

struct EpochStats {
  double loss = 0.0;
  double mse = 0.0;
  double ce = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

// Deterministic given (params, samples, cfg): fixed shuffle and dropout
// streams derived from cfg.seed. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelConfig& model, ModelParams& params, const Tensor& adjacency_norm,
                  const std::vector<Sample>& samples, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Eval-mode joint loss averaged over samples (no dropout).
BatchLoss evaluate_loss(const ModelConfig& model, const ModelParams& params, const Tensor& adjacency_norm,
                        const std::vector<Sample>& samples, double lambda_text);

}  // namespace ctl
