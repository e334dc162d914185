#include "ctl/model.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"

namespace ctl {

PredictorConfig ModelConfig::predictor() const {
  PredictorConfig p;
  p.channels = channels;
  p.window = window;
  p.patch = patch;
  p.dim = dim;
  p.heads = heads;
  p.blocks = blocks;
  return p;
}

GeneratorConfig ModelConfig::generator() const {
  GeneratorConfig g;
  g.n_nodes = n_nodes;
  g.features = window * channels;
  g.dim = dim;
  g.heads = heads;
  g.vocab = vocab;
  g.layers = decoder_layers;
  g.detector_hidden = detector_hidden;
  g.lora_rank = lora_rank;
  g.lora_alpha = lora_alpha;
  g.lora_dropout = lora_dropout;
  g.memory_slots = memory_slots;
  return g;
}

void ModelConfig::validate() const {
  if (n_nodes == 0) throw ConfigError("model: n_nodes must be positive");
  if (text_length < 3) throw ConfigError("model: text_length must be >= 3");
  if (effective_top_k() > text_length) throw ConfigError("model: top_k exceeds text_length");
  if (node_embed_dim == 0) throw ConfigError("model: node_embed_dim must be positive");
  if (!(eta > 0.0)) throw ConfigError("model: eta must be positive");
  predictor().validate();
  generator().validate();
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  return ModelParams{TextEncoderParams::zeros(cfg.vocab, cfg.dim),
                     FusionParams::zeros(cfg.dim, cfg.n_nodes, cfg.node_embed_dim),
                     PredictorParams::zeros(cfg.predictor()), GeneratorParams::zeros(cfg.generator())};
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const RngState root(seed);
  RngState r1 = root.fork(1), r2 = root.fork(2), r3 = root.fork(3), r4 = root.fork(4);
  return ModelParams{TextEncoderParams::init(cfg.vocab, cfg.dim, r1),
                     FusionParams::init(cfg.dim, cfg.n_nodes, cfg.node_embed_dim, r2),
                     PredictorParams::init(cfg.predictor(), r3), GeneratorParams::init(cfg.generator(), r4)};
}

ParamList ModelParams::collect() {
  ParamList out;
  text.collect(out, "text");
  fusion.collect(out, "fusion");
  predictor.collect(out, "predictor");
  generator.collect(out, "generator");
  return out;
}

std::size_t ModelParams::count() {
  std::size_t n = 0;
  for (const auto& p : collect()) n += p.tensor->size();
  return n;
}

Tensor traffic_features(const Tensor& y) {
  if (y.rank() != 3) throw DimensionError("traffic_features: expected [t,N,C], got " + shape_string(y.shape()));
  const std::size_t t = y.dim(0), n = y.dim(1), c = y.dim(2);
  Tensor f({n, t * c});
  for (std::size_t tau = 0; tau < t; ++tau) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < c; ++k) f.at(j, tau * c + k) = y.at(tau, j, k);
    }
  }
  return f;
}

namespace {

void check_sample(const ModelConfig& cfg, const Sample& s) {
  const Tensor::Shape want{cfg.window, cfg.n_nodes, cfg.channels};
  if (s.x_hist.shape() != want || s.y_future.shape() != want) {
    throw DimensionError("model: sample tensors " + shape_string(s.x_hist.shape()) + " do not match config " +
                         shape_string(want));
  }
  if (s.text_hist.size() != cfg.text_length || s.text_future.size() != cfg.text_length) {
    throw DimensionError("model: token sequences must have length " + std::to_string(cfg.text_length));
  }
}

// Forecaster state of one sample.
struct PredictorPass {
  nn::Buffer h0;    // [P,N,D] patch embeddings
  nn::Buffer pool;  // [P,D]
  nn::Buffer text;  // [L,D]
  TextEncoderCache text_cache;
  fusion::AlignCache align;
  nn::Buffer ctx;  // [P,D]
  fusion::FilmCache film;
  nn::Buffer xg;  // [P,N,D] after FiLM
  fusion::GcnCache gcn;
  nn::Buffer h1;  // [P,N,D] encoder input
  predictor::EncoderCache enc;
  nn::Buffer y;  // [t,N,C]
};

void predictor_forward(const ModelConfig& cfg, const ModelParams& p, const double* a_mix, const Sample& s,
                       const SampleMasks* fixed, PredictorPass& f) {
  const PredictorConfig pc = cfg.predictor();
  const std::size_t n = cfg.n_nodes, d = cfg.dim, np = pc.patches(), l = cfg.text_length;
  f.h0.assign(np * n * d, 0.0);
  predictor::patch_embed_forward(pc, p.predictor, s.x_hist.data(), n, f.h0.data());
  if (cfg.flags.use_text) {
    f.text.assign(l * d, 0.0);
    text_encoder_forward(p.text, s.text_hist.ids.data(), l, f.text.data(), f.text_cache);
    f.pool.assign(np * d, 0.0);
    for (std::size_t pi = 0; pi < np; ++pi) {
      for (std::size_t j = 0; j < n; ++j) {
        kernels::axpy(1.0 / static_cast<double>(n), f.h0.data() + (pi * n + j) * d, f.pool.data() + pi * d, d);
      }
    }
    f.ctx.assign(np * d, 0.0);
    fusion::align_forward(f.pool.data(), np, f.text.data(), l, d, cfg.effective_top_k(),
                          fixed ? fixed->align.data() : nullptr, f.ctx.data(), f.align);
    f.xg.assign(np * n * d, 0.0);
    fusion::film_forward(p.fusion, f.ctx.data(), f.h0.data(), np, n, cfg.eta, f.xg.data(), f.film);
  } else {
    f.xg = f.h0;
  }
  if (cfg.flags.use_gcn) {
    f.h1.assign(np * n * d, 0.0);
    fusion::gcn_forward(a_mix, f.xg.data(), np, n, p.fusion.gcn_w, p.fusion.gcn_b, f.h1.data(), f.gcn);
  } else {
    f.h1 = f.xg;
  }
  f.y.assign(cfg.window * n * cfg.channels, 0.0);
  predictor::encode_decode_forward(pc, p.predictor, f.h1.data(), n, f.y.data(), f.enc);
}

void predictor_backward(const ModelConfig& cfg, const ModelParams& p, const double* a_mix, const Sample& s,
                        const PredictorPass& f, const double* dy, double* da_mix, ModelParams& g) {
  const PredictorConfig pc = cfg.predictor();
  const std::size_t n = cfg.n_nodes, d = cfg.dim, np = pc.patches(), l = cfg.text_length;
  nn::Buffer dh1(np * n * d, 0.0);
  predictor::encode_decode_backward(pc, p.predictor, dy, n, f.enc, dh1.data(), g.predictor);
  nn::Buffer dxg;
  if (cfg.flags.use_gcn) {
    dxg.assign(np * n * d, 0.0);
    fusion::gcn_backward(a_mix, f.xg.data(), np, n, p.fusion.gcn_w, f.gcn, dh1.data(), dxg.data(), da_mix,
                         g.fusion.gcn_w, g.fusion.gcn_b);
  } else {
    dxg = std::move(dh1);
  }
  nn::Buffer dh0;
  if (cfg.flags.use_text) {
    dh0.assign(np * n * d, 0.0);
    nn::Buffer dctx(np * d, 0.0), dpool(np * d, 0.0), dtext(l * d, 0.0);
    fusion::film_backward(p.fusion, f.ctx.data(), f.h0.data(), np, n, cfg.eta, f.film, dxg.data(), dctx.data(),
                          dh0.data(), g.fusion);
    fusion::align_backward(f.pool.data(), np, f.text.data(), l, d, f.align, dctx.data(), dpool.data(), dtext.data());
    for (std::size_t pi = 0; pi < np; ++pi) {
      for (std::size_t j = 0; j < n; ++j) {
        kernels::axpy(1.0 / static_cast<double>(n), dpool.data() + pi * d, dh0.data() + (pi * n + j) * d, d);
      }
    }
    text_encoder_backward(p.text, f.text_cache, dtext.data(), g.text);
  } else {
    dh0 = std::move(dxg);
  }
  predictor::patch_embed_backward(pc, p.predictor, s.x_hist.data(), n, dh0.data(), g.predictor);
}

}  // namespace

BatchLoss batch_loss(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                     const std::vector<const Sample*>& batch, const LossOptions& opts, ModelParams* grad) {
  if (batch.empty()) throw ParameterError("batch_loss: empty batch");
  const std::size_t n = cfg.n_nodes;
  if (adjacency_norm.shape() != Tensor::Shape{n, n}) {
    throw DimensionError("batch_loss: adjacency " + shape_string(adjacency_norm.shape()) + " does not match " +
                         std::to_string(n) + " nodes");
  }
  if (opts.masks) {
    if (opts.masks_fixed && opts.masks->size() != batch.size()) {
      throw ParameterError("batch_loss: fixed masks do not match the batch");
    }
    if (!opts.masks_fixed) opts.masks->assign(batch.size(), SampleMasks{});
  }
  const GeneratorConfig gc = cfg.generator();
  const std::size_t out_sz = cfg.window * n * cfg.channels;
  const std::size_t l_in = cfg.text_length - 1;
  const std::size_t v = cfg.vocab;

  std::size_t ce_count = 0;
  for (const Sample* s : batch) {
    check_sample(cfg, *s);
    for (std::size_t i = 1; i < cfg.text_length; ++i) ce_count += s->text_future.ids[i] != kPad;
  }
  const double mse_count = static_cast<double>(out_sz * batch.size());

  fusion::AdjacencyCache adj_cache;
  nn::Buffer a_mix(n * n);
  fusion::adjacency_forward(params.fusion.node_embed, adjacency_norm, a_mix.data(), adj_cache);
  nn::Buffer da_mix(n * n, 0.0);

  BatchLoss loss;
  PredictorPass pass;
  generator::ConditionCache cond;
  generator::DecoderCache dec;
  nn::Buffer logits(l_in * v), dlogits(l_in * v), dy(out_sz);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& s = *batch[b];
    const SampleMasks* fixed = opts.masks && opts.masks_fixed ? &(*opts.masks)[b] : nullptr;
    predictor_forward(cfg, params, a_mix.data(), s, fixed, pass);
    for (std::size_t i = 0; i < out_sz; ++i) {
      const double e = pass.y[i] - s.y_future[i];
      loss.mse += e * e;
      dy[i] = 2.0 * e / mse_count;
    }

    const Tensor feats = traffic_features(cfg.teacher_forcing ? s.y_future
                                                              : Tensor(s.y_future.shape(), pass.y));
    generator::condition_forward(gc, params.generator, cfg.flags, feats.data(), a_mix.data(),
                                 fixed ? &fixed->selected : nullptr, cond);
    RngState sample_rng = opts.dropout_rng ? opts.dropout_rng->fork(b) : RngState();
    generator::decoder_forward(gc, params.generator, cfg.flags, cond, s.text_future.ids.data(), l_in,
                               opts.dropout_rng ? &sample_rng : nullptr, logits.data(), dec);
    loss.ce += generator::token_cross_entropy(logits.data(), s.text_future.ids.data() + 1, l_in, v,
                                              grad ? dlogits.data() : nullptr, nullptr);

    if (opts.masks && !opts.masks_fixed) {
      SampleMasks& m = (*opts.masks)[b];
      if (cfg.flags.use_text) m.align = pass.align.mask;
      m.selected = cond.selected;
    }

    if (grad) {
      const double scale = opts.lambda_text / static_cast<double>(std::max<std::size_t>(ce_count, 1));
      for (double& x : dlogits) x *= scale;
      nn::Buffer dkv(cond.kv.size(), 0.0), dctx(cfg.dim, 0.0);
      generator::decoder_backward(gc, params.generator, cfg.flags, cond, dec, dlogits.data(), dkv.data(),
                                  dctx.data(), grad->generator, opts.freeze_decoder_base);
      nn::Buffer dfeat;
      if (!cfg.teacher_forcing) dfeat.assign(n * cfg.window * cfg.channels, 0.0);
      generator::condition_backward(gc, params.generator, cfg.flags, cond, dkv.data(), dctx.data(),
                                    cfg.flags.use_gcn ? da_mix.data() : nullptr,
                                    cfg.teacher_forcing ? nullptr : dfeat.data(), grad->generator);
      if (!cfg.teacher_forcing) {
        const std::size_t c = cfg.channels;
        for (std::size_t tau = 0; tau < cfg.window; ++tau) {
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < c; ++k) dy[(tau * n + j) * c + k] += dfeat[j * cfg.window * c + tau * c + k];
          }
        }
      }
      predictor_backward(cfg, params, a_mix.data(), s, pass, dy.data(), da_mix.data(), *grad);
    }
  }
  if (grad && (cfg.flags.use_gcn)) {
    fusion::adjacency_backward(params.fusion.node_embed, adj_cache, da_mix.data(), grad->fusion.node_embed);
  }
  loss.mse /= mse_count;
  loss.ce /= static_cast<double>(std::max<std::size_t>(ce_count, 1));
  loss.total = loss.mse + opts.lambda_text * loss.ce;
  return loss;
}

Tensor forecast_sample(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                       const Sample& sample) {
  check_sample(cfg, sample);
  const std::size_t n = cfg.n_nodes;
  fusion::AdjacencyCache adj_cache;
  nn::Buffer a_mix(n * n);
  fusion::adjacency_forward(params.fusion.node_embed, adjacency_norm, a_mix.data(), adj_cache);
  PredictorPass pass;
  predictor_forward(cfg, params, a_mix.data(), sample, nullptr, pass);
  return Tensor({cfg.window, n, cfg.channels}, std::move(pass.y));
}

Description describe_sample(const ModelConfig& cfg, const ModelParams& params, const Tensor& adjacency_norm,
                            const Tensor& traffic) {
  const std::size_t n = cfg.n_nodes;
  if (traffic.shape() != Tensor::Shape{cfg.window, n, cfg.channels}) {
    throw DimensionError("describe: traffic must be [t,N,C], got " + shape_string(traffic.shape()));
  }
  Tensor a_mix({n, n});
  fusion::AdjacencyCache adj_cache;
  fusion::adjacency_forward(params.fusion.node_embed, adjacency_norm, a_mix.data(), adj_cache);
  const GeneratorConfig gc = cfg.generator();
  TextGenerator gen(gc, params.generator, cfg.flags, traffic_features(traffic), a_mix);
  return Description{gen.greedy_decode(cfg.text_length), gen.selected()};
}

}  // namespace ctl
