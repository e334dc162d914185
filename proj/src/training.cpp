#include "ctl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ctl/error.hpp"

namespace ctl {

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.lr = 5e-5;
  c.epochs = 50;
  c.warmup_epochs = 5;
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (batch == 0) throw ConfigError("train: batch must be >= 1");
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs >= epochs) throw ConfigError("train: warmup_epochs must be smaller than epochs");
  if (!(lambda_text >= 0.0)) throw ConfigError("train: lambda_text must be >= 0");
}

AdamState AdamState::for_params(const ParamList& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros_like(*p.tensor));
    s.v.push_back(Tensor::zeros_like(*p.tensor));
  }
  return s;
}

void adam_step(const ParamList& params, const ParamList& grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: parameter, gradient and state lists differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t].tensor;
    const Tensor& g = *grads[t].tensor;
    require_same_shape(p, g, "adam_step");
    Tensor& m = state.m[t];
    Tensor& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
  if (warmup_steps >= total_steps) throw ParameterError("lr_schedule: warmup_steps must be < total_steps");
  step = std::min(step, total_steps);
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double joint_loss(const Tensor& forecast, const Tensor& y_true, const Tensor& token_logprobs,
                  std::span<const TokenId> token_targets, double lambda_text) {
  require_same_shape(forecast, y_true, "joint_loss");
  if (token_logprobs.rank() != 2 || token_logprobs.dim(0) != token_targets.size()) {
    throw DimensionError("joint_loss: token_logprobs must be [S,V] with S = number of targets");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < forecast.size(); ++i) mse += (forecast[i] - y_true[i]) * (forecast[i] - y_true[i]);
  mse /= static_cast<double>(forecast.size());
  double ce = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < token_targets.size(); ++s) {
    if (token_targets[s] == kPad) continue;
    ce -= token_logprobs.at(s, static_cast<std::size_t>(token_targets[s]));
    ++n;
  }
  if (n > 0) ce /= static_cast<double>(n);
  return mse + lambda_text * ce;
}

TrainResult train(const ModelConfig& model, ModelParams& params, const Tensor& adjacency_norm,
                  const std::vector<Sample>& samples, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (samples.empty()) throw ParameterError("train: empty training split");
  const std::size_t per_epoch = (samples.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t total = per_epoch * cfg.epochs;
  const std::size_t warmup = per_epoch * cfg.warmup_epochs;

  ModelParams grad = ModelParams::zeros(model);
  const ParamList plist = params.collect();
  const ParamList glist = grad.collect();
  AdamState adam = AdamState::for_params(plist);
  const RngState root(cfg.seed);

  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::vector<const Sample*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngState shuffle_rng = root.fork(1).fork(epoch);
    shuffle_indices(order, shuffle_rng);
    EpochStats stats;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i) {
        batch.push_back(&samples[order[i]]);
      }
      for (const auto& g : glist) g.tensor->set_zero();
      RngState dropout_rng = root.fork(2).fork(result.steps);
      LossOptions opts;
      opts.lambda_text = cfg.lambda_text;
      opts.dropout_rng = &dropout_rng;
      opts.freeze_decoder_base = cfg.freeze_decoder_base;
      const BatchLoss loss = batch_loss(model, params, adjacency_norm, batch, opts, &grad);
      if (!std::isfinite(loss.total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", step " << result.steps << " (mse " << loss.mse << ", ce "
           << loss.ce << ", lr " << lr_schedule(result.steps + 1, total, warmup, cfg.lr) << ")";
        throw DivergenceError(os.str());
      }
      const double lr = lr_schedule(result.steps + 1, total, warmup, cfg.lr);
      adam_step(plist, glist, adam, lr);
      ++result.steps;
      const double w = static_cast<double>(batch.size());
      stats.loss += w * loss.total;
      stats.mse += w * loss.mse;
      stats.ce += w * loss.ce;
      seen += batch.size();
    }
    if (seen == 0) break;
    stats.loss /= static_cast<double>(seen);
    stats.mse /= static_cast<double>(seen);
    stats.ce /= static_cast<double>(seen);
    for (const auto& p : plist) {
      if (!p.tensor->all_finite()) {
        throw DivergenceError("parameter " + p.name + " became non-finite in epoch " + std::to_string(epoch));
      }
    }
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  return result;
}

BatchLoss evaluate_loss(const ModelConfig& model, const ModelParams& params, const Tensor& adjacency_norm,
                        const std::vector<Sample>& samples, double lambda_text) {
  std::vector<const Sample*> all;
  for (const Sample& s : samples) all.push_back(&s);
  LossOptions opts;
  opts.lambda_text = lambda_text;
  return batch_loss(model, params, adjacency_norm, all, opts, nullptr);
}

}  // namespace ctl
