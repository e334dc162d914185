#include "ctl/generator.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/ops.hpp"

namespace ctl {

void GeneratorConfig::validate() const {
  if (n_nodes == 0 || features == 0 || dim == 0 || vocab <= kNumSpecials || layers == 0 || detector_hidden == 0) {
    throw ConfigError("generator: sizes must be positive and the vocabulary must hold words");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("generator: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (lora_rank == 0 || lora_rank > dim) {
    throw ConfigError("generator: LoRA rank " + std::to_string(lora_rank) + " exceeds dim " + std::to_string(dim));
  }
  if (memory_slots == 0) throw ConfigError("generator: memory needs at least one slot");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw ConfigError("generator: LoRA dropout must be in [0,1)");
  if (!(select_ratio > 0.0 && select_ratio <= 1.0)) throw ConfigError("generator: select ratio must be in (0,1]");
}

void DecoderLayerParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".wq", &wq});
  out.push_back({prefix + ".wk", &wk});
  out.push_back({prefix + ".wv", &wv});
  out.push_back({prefix + ".wo", &wo});
  out.push_back({prefix + ".lora_aq", &aq});
  out.push_back({prefix + ".lora_bq", &bq});
  out.push_back({prefix + ".lora_av", &av});
  out.push_back({prefix + ".lora_bv", &bv});
  out.push_back({prefix + ".ln_gain", &ln_gain});
  out.push_back({prefix + ".ln_bias", &ln_bias});
}

GeneratorParams GeneratorParams::zeros(const GeneratorConfig& cfg) {
  const std::size_t d = cfg.dim, f = cfg.features, h = cfg.detector_hidden, r = cfg.lora_rank;
  GeneratorParams p;
  p.det_w1 = Tensor({f, h});
  p.det_b1 = Tensor({h});
  p.det_w2 = Tensor({h, 1});
  p.det_b2 = Tensor({1});
  p.in_w = Tensor({f, d});
  p.in_b = Tensor({d});
  p.node_embed = Tensor({cfg.n_nodes, d});
  p.gcn_w = Tensor({d, d});
  p.gcn_b = Tensor({d});
  p.ctx_w = Tensor({d, d});
  p.tok_embed = Tensor({cfg.vocab, d});
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    p.layers.push_back({Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), Tensor({d, d}), Tensor({r, d}),
                        Tensor({r, d}), Tensor({d, r}), Tensor({d, r}), Tensor({d}), Tensor({d})});
  }
  p.xattn = nn::MhaWeights::zeros(d);
  p.gate_w = Tensor({2 * d, d});
  p.gate_b = Tensor({d});
  p.mem_keys = Tensor({cfg.memory_slots, d});
  p.mem_values = Tensor({cfg.memory_slots, d});
  p.mem_wq = Tensor({d, d});
  p.mem_wo = Tensor({d, d});
  p.lm_w = Tensor({d, cfg.vocab});
  p.lm_b = Tensor({cfg.vocab});
  return p;
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, RngState& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim, f = cfg.features, h = cfg.detector_hidden, r = cfg.lora_rank;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  GeneratorParams p = zeros(cfg);
  p.det_w1 = random_normal({f, h}, sf, rng);
  p.det_w2 = random_normal({h, 1}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  p.in_w = random_normal({f, d}, sf, rng);
  p.node_embed = random_normal({cfg.n_nodes, d}, sd, rng);
  p.gcn_w = random_normal({d, d}, sd, rng);
  p.ctx_w = random_normal({d, d}, sd, rng);
  p.tok_embed = random_normal({cfg.vocab, d}, 1.0, rng);
  for (auto& l : p.layers) {
    l.wq = random_normal({d, d}, sd, rng);
    l.wk = random_normal({d, d}, sd, rng);
    l.wv = random_normal({d, d}, sd, rng);
    l.wo = random_normal({d, d}, sd, rng);
    l.aq = random_normal({r, d}, sd, rng);
    l.av = random_normal({r, d}, sd, rng);
    l.ln_gain.fill(1.0);
  }
  p.xattn = nn::MhaWeights{random_normal({d, d}, sd, rng), random_normal({d, d}, sd, rng),
                           random_normal({d, d}, sd, rng), random_normal({d, d}, sd, rng)};
  p.gate_w = random_normal({2 * d, d}, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng);
  p.mem_keys = random_normal({cfg.memory_slots, d}, 1.0, rng);
  p.mem_values = random_normal({cfg.memory_slots, d}, sd, rng);
  p.mem_wq = random_normal({d, d}, sd, rng);
  p.mem_wo = random_normal({d, d}, sd, rng);
  p.lm_w = random_normal({d, cfg.vocab}, sd, rng);
  return p;
}

void GeneratorParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".det_w1", &det_w1});
  out.push_back({prefix + ".det_b1", &det_b1});
  out.push_back({prefix + ".det_w2", &det_w2});
  out.push_back({prefix + ".det_b2", &det_b2});
  out.push_back({prefix + ".in_w", &in_w});
  out.push_back({prefix + ".in_b", &in_b});
  out.push_back({prefix + ".node_embed", &node_embed});
  out.push_back({prefix + ".gcn_w", &gcn_w});
  out.push_back({prefix + ".gcn_b", &gcn_b});
  out.push_back({prefix + ".ctx_w", &ctx_w});
  out.push_back({prefix + ".tok_embed", &tok_embed});
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
  xattn.collect(out, prefix + ".xattn");
  out.push_back({prefix + ".gate_w", &gate_w});
  out.push_back({prefix + ".gate_b", &gate_b});
  out.push_back({prefix + ".mem_keys", &mem_keys});
  out.push_back({prefix + ".mem_values", &mem_values});
  out.push_back({prefix + ".mem_wq", &mem_wq});
  out.push_back({prefix + ".mem_wo", &mem_wo});
  out.push_back({prefix + ".lm_w", &lm_w});
  out.push_back({prefix + ".lm_b", &lm_b});
}

std::size_t selection_count(std::size_t n, double ratio) {
  const double k = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 0.0)), 1, std::max<std::size_t>(n, 1));
}

namespace generator {

void condition_forward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                       const double* x, const double* a_mix, const std::vector<std::size_t>* fixed_selection,
                       ConditionCache& c) {
  const std::size_t n = cfg.n_nodes, f = cfg.features, h = cfg.detector_hidden, d = cfg.dim;
  c.x.assign(x, x + n * f);
  c.det_pre.assign(n * h, 0.0);
  nn::linear_forward(x, n, p.det_w1, &p.det_b1, c.det_pre.data());
  c.det_h.resize(n * h);
  for (std::size_t i = 0; i < n * h; ++i) c.det_h[i] = std::max(0.0, c.det_pre[i]);
  c.scores.assign(n, 0.0);
  nn::linear_forward(c.det_h.data(), n, p.det_w2, &p.det_b2, c.scores.data());
  for (double& s : c.scores) s = ctl::detail::sigmoid(s);

  if (!flags.use_importance) {
    c.selected.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.selected[i] = i;
  } else if (fixed_selection) {
    c.selected = *fixed_selection;
  } else {
    c.selected = ctl::detail::topk_indices(c.scores.data(), n, selection_count(n, cfg.select_ratio));
  }

  c.feat_pre.assign(n * d, 0.0);
  nn::linear_forward(x, n, p.in_w, &p.in_b, c.feat_pre.data());
  kernels::axpy(1.0, p.node_embed.data(), c.feat_pre.data(), n * d);
  c.feat.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) c.feat[i] = std::max(0.0, c.feat_pre[i]);

  const double* g = c.feat.data();
  if (flags.use_gcn) {
    c.a.assign(a_mix, a_mix + n * n);
    c.gcn_out.assign(n * d, 0.0);
    fusion::gcn_forward(c.a.data(), c.feat.data(), 1, n, p.gcn_w, p.gcn_b, c.gcn_out.data(), c.gcn);
    g = c.gcn_out.data();
  }

  const std::size_t k = c.selected.size();
  c.kv.assign(k * d, 0.0);
  c.ctx.assign(d, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t node = c.selected[i];
    const double w = flags.use_importance ? c.scores[node] : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      c.kv[i * d + j] = w * g[node * d + j];
      c.ctx[j] += c.kv[i * d + j] / static_cast<double>(k);
    }
  }
  c.ctx_proj.assign(d, 0.0);
  nn::linear_forward(c.ctx.data(), 1, p.ctx_w, nullptr, c.ctx_proj.data());
}

void condition_backward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                        const ConditionCache& c, const double* dkv, const double* dctx_proj, double* da, double* dx,
                        GeneratorParams& grad) {
  const std::size_t n = cfg.n_nodes, h = cfg.detector_hidden, d = cfg.dim;
  nn::Buffer dctx(d, 0.0);
  nn::linear_backward(c.ctx.data(), 1, p.ctx_w, dctx_proj, dctx.data(), grad.ctx_w, nullptr);

  const double* g = flags.use_gcn ? c.gcn_out.data() : c.feat.data();
  const std::size_t k = c.selected.size();
  nn::Buffer dg(n * d, 0.0), dscore(n, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t node = c.selected[i];
    const double w = flags.use_importance ? c.scores[node] : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = dkv[i * d + j] + dctx[j] / static_cast<double>(k);
      dg[node * d + j] += w * dv;
      dscore[node] += dv * g[node * d + j];
    }
  }

  nn::Buffer dfeat(n * d, 0.0);
  if (flags.use_gcn) {
    fusion::gcn_backward(c.a.data(), c.feat.data(), 1, n, p.gcn_w, c.gcn, dg.data(), dfeat.data(), da, grad.gcn_w,
                         grad.gcn_b);
  } else {
    dfeat = dg;
  }
  for (std::size_t i = 0; i < n * d; ++i) {
    if (c.feat_pre[i] <= 0.0) dfeat[i] = 0.0;
  }
  kernels::axpy(1.0, dfeat.data(), grad.node_embed.data(), n * d);
  nn::linear_backward(c.x.data(), n, p.in_w, dfeat.data(), dx, grad.in_w, &grad.in_b);

  if (flags.use_importance) {
    nn::Buffer dlogit(n);
    for (std::size_t i = 0; i < n; ++i) dlogit[i] = dscore[i] * c.scores[i] * (1.0 - c.scores[i]);
    nn::Buffer ddet(n * h, 0.0);
    nn::linear_backward(c.det_h.data(), n, p.det_w2, dlogit.data(), ddet.data(), grad.det_w2, &grad.det_b2);
    for (std::size_t i = 0; i < n * h; ++i) {
      if (c.det_pre[i] <= 0.0) ddet[i] = 0.0;
    }
    nn::linear_backward(c.x.data(), n, p.det_w1, ddet.data(), dx, grad.det_w1, &grad.det_b1);
  }
}

namespace {

void dropout_mask(std::size_t count, double rate, RngState& rng, nn::Buffer& keep) {
  keep.resize(count);
  const double inv = 1.0 / (1.0 - rate);
  for (double& k : keep) k = rng.bernoulli(rate) ? 0.0 : inv;
}

}  // namespace

void decoder_forward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                     const ConditionCache& cond, const TokenId* tokens, std::size_t s, RngState* rng,
                     double* logits, DecoderCache& c) {
  const std::size_t d = cfg.dim, v = cfg.vocab, r = cfg.lora_rank;
  c.tokens.assign(tokens, tokens + s);
  c.embed.assign(s * d, 0.0);
  for (std::size_t l = 0; l < s; ++l) {
    if (tokens[l] < 0 || static_cast<std::size_t>(tokens[l]) >= v) {
      throw ParameterError("decoder: token id " + std::to_string(tokens[l]) + " outside vocabulary");
    }
    double* e = c.embed.data() + l * d;
    std::copy(p.tok_embed.row(tokens[l]), p.tok_embed.row(tokens[l]) + d, e);
    kernels::axpy(1.0, cond.ctx_proj.data(), e, d);
  }
  nn::add_sinusoidal(c.embed.data(), s, d);

  const double scale = cfg.lora_scale();
  const bool dropout = rng && cfg.lora_dropout > 0.0;
  c.layers.resize(p.layers.size());
  nn::Buffer cur = c.embed;
  nn::Buffer keep_q, keep_v, att(s * d);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const DecoderLayerParams& lp = p.layers[li];
    LayerCache& lc = c.layers[li];
    lc.input = cur;
    lc.q.assign(s * d, 0.0);
    lc.k.assign(s * d, 0.0);
    lc.v.assign(s * d, 0.0);
    if (dropout) {
      dropout_mask(s * r, cfg.lora_dropout, *rng, keep_q);
      dropout_mask(s * r, cfg.lora_dropout, *rng, keep_v);
    }
    nn::lora_forward(lc.input.data(), s, lp.wq, lp.aq, lp.bq, scale, dropout ? &keep_q : nullptr, lc.q.data(), lc.lq);
    nn::linear_forward(lc.input.data(), s, lp.wk, nullptr, lc.k.data());
    nn::lora_forward(lc.input.data(), s, lp.wv, lp.av, lp.bv, scale, dropout ? &keep_v : nullptr, lc.v.data(), lc.lv);
    lc.ctx.assign(s * d, 0.0);
    lc.probs.assign(cfg.heads * s * s, 0.0);
    nn::attention_forward(lc.q.data(), lc.k.data(), lc.v.data(), {s, s, d, cfg.heads}, nullptr, true, lc.ctx.data(),
                          lc.probs.data());
    nn::linear_forward(lc.ctx.data(), s, lp.wo, nullptr, att.data());
    lc.z.resize(s * d);
    for (std::size_t i = 0; i < s * d; ++i) lc.z[i] = lc.input[i] + att[i];
    nn::layer_norm_forward(lc.z.data(), s, d, lp.ln_gain, lp.ln_bias, kLayerNormEps, cur.data(), lc.ln);
  }
  c.h_text = cur;

  const std::size_t k = cond.selected.size();
  if (flags.use_xattn) {
    c.h_mod.assign(s * d, 0.0);
    nn::mha_forward(p.xattn, c.h_text.data(), s, cond.kv.data(), k, cfg.heads, nullptr, false, c.h_mod.data(),
                    c.xattn);
    c.gate_in.resize(s * 2 * d);
    for (std::size_t l = 0; l < s; ++l) {
      std::copy(c.h_text.data() + l * d, c.h_text.data() + (l + 1) * d, c.gate_in.data() + l * 2 * d);
      std::copy(c.h_mod.data() + l * d, c.h_mod.data() + (l + 1) * d, c.gate_in.data() + l * 2 * d + d);
    }
    c.gate.assign(s * d, 0.0);
    nn::linear_forward(c.gate_in.data(), s, p.gate_w, &p.gate_b, c.gate.data());
    c.h_fusion.resize(s * d);
    for (std::size_t i = 0; i < s * d; ++i) {
      c.gate[i] = ctl::detail::sigmoid(c.gate[i]);
      c.h_fusion[i] = c.h_text[i] + c.gate[i] * c.h_mod[i];
    }
  } else {
    c.h_fusion = c.h_text;
  }

  c.h_final = c.h_fusion;
  if (flags.use_memory) {
    const std::size_t m = p.mem_keys.dim(0);
    c.mem_q.assign(s * d, 0.0);
    nn::linear_forward(c.h_fusion.data(), s, p.mem_wq, nullptr, c.mem_q.data());
    c.mem_ctx.assign(s * d, 0.0);
    c.mem_probs.assign(cfg.heads * s * m, 0.0);
    nn::attention_forward(c.mem_q.data(), p.mem_keys.data(), p.mem_values.data(), {s, m, d, cfg.heads}, nullptr,
                          false, c.mem_ctx.data(), c.mem_probs.data());
    nn::Buffer read(s * d);
    nn::linear_forward(c.mem_ctx.data(), s, p.mem_wo, nullptr, read.data());
    kernels::axpy(1.0, read.data(), c.h_final.data(), s * d);
  }
  nn::linear_forward(c.h_final.data(), s, p.lm_w, &p.lm_b, logits);
}

void decoder_backward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                      const ConditionCache& cond, const DecoderCache& c, const double* dlogits, double* dkv,
                      double* dctx_proj, GeneratorParams& grad, bool freeze_base) {
  const std::size_t d = cfg.dim;
  const std::size_t s = c.tokens.size();
  nn::Buffer dh_final(s * d, 0.0);
  nn::linear_backward(c.h_final.data(), s, p.lm_w, dlogits, dh_final.data(), grad.lm_w, &grad.lm_b);

  nn::Buffer dh_fusion = dh_final;
  if (flags.use_memory) {
    const std::size_t m = p.mem_keys.dim(0);
    nn::Buffer dctx(s * d, 0.0), dq(s * d, 0.0);
    nn::linear_backward(c.mem_ctx.data(), s, p.mem_wo, dh_final.data(), dctx.data(), grad.mem_wo, nullptr);
    nn::attention_backward(c.mem_q.data(), p.mem_keys.data(), p.mem_values.data(), {s, m, d, cfg.heads},
                           c.mem_probs.data(), dctx.data(), dq.data(), grad.mem_keys.data(), grad.mem_values.data());
    nn::linear_backward(c.h_fusion.data(), s, p.mem_wq, dq.data(), dh_fusion.data(), grad.mem_wq, nullptr);
  }

  nn::Buffer dh = dh_fusion;
  if (flags.use_xattn) {
    const std::size_t k = cond.selected.size();
    nn::Buffer dmod(s * d), dpre(s * d);
    for (std::size_t i = 0; i < s * d; ++i) {
      dmod[i] = c.gate[i] * dh_fusion[i];
      dpre[i] = dh_fusion[i] * c.h_mod[i] * c.gate[i] * (1.0 - c.gate[i]);
    }
    nn::Buffer dgin(s * 2 * d, 0.0);
    nn::linear_backward(c.gate_in.data(), s, p.gate_w, dpre.data(), dgin.data(), grad.gate_w, &grad.gate_b);
    for (std::size_t l = 0; l < s; ++l) {
      kernels::axpy(1.0, dgin.data() + l * 2 * d, dh.data() + l * d, d);
      kernels::axpy(1.0, dgin.data() + l * 2 * d + d, dmod.data() + l * d, d);
    }
    nn::mha_backward(p.xattn, c.h_text.data(), s, cond.kv.data(), k, cfg.heads, c.xattn, dmod.data(), dh.data(), dkv,
                     grad.xattn);
  }

  const double scale = cfg.lora_scale();
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const DecoderLayerParams& lp = p.layers[li];
    DecoderLayerParams& lg = grad.layers[li];
    const LayerCache& lc = c.layers[li];
    Tensor scratch_q, scratch_k, scratch_v, scratch_o;
    if (freeze_base) {
      scratch_q = Tensor::zeros_like(lp.wq);
      scratch_k = Tensor::zeros_like(lp.wk);
      scratch_v = Tensor::zeros_like(lp.wv);
      scratch_o = Tensor::zeros_like(lp.wo);
    }
    nn::Buffer dz(s * d, 0.0);
    nn::layer_norm_backward(dh.data(), s, d, lp.ln_gain, lc.ln, dz.data(), lg.ln_gain, lg.ln_bias);
    nn::Buffer din = dz;
    nn::Buffer dctx(s * d, 0.0), dq(s * d, 0.0), dk(s * d, 0.0), dv(s * d, 0.0);
    nn::linear_backward(lc.ctx.data(), s, lp.wo, dz.data(), dctx.data(), freeze_base ? scratch_o : lg.wo, nullptr);
    nn::attention_backward(lc.q.data(), lc.k.data(), lc.v.data(), {s, s, d, cfg.heads}, lc.probs.data(), dctx.data(),
                           dq.data(), dk.data(), dv.data());
    nn::lora_backward(lc.input.data(), s, lp.wq, lp.aq, lp.bq, scale, lc.lq, dq.data(), din.data(),
                      freeze_base ? scratch_q : lg.wq, lg.aq, lg.bq);
    nn::linear_backward(lc.input.data(), s, lp.wk, dk.data(), din.data(), freeze_base ? scratch_k : lg.wk, nullptr);
    nn::lora_backward(lc.input.data(), s, lp.wv, lp.av, lp.bv, scale, lc.lv, dv.data(), din.data(),
                      freeze_base ? scratch_v : lg.wv, lg.av, lg.bv);
    dh = std::move(din);
  }

  for (std::size_t l = 0; l < s; ++l) {
    kernels::axpy(1.0, dh.data() + l * d, grad.tok_embed.row(c.tokens[l]), d);
    kernels::axpy(1.0, dh.data() + l * d, dctx_proj, d);
  }
}

double token_cross_entropy(const double* logits, const TokenId* targets, std::size_t s, std::size_t v,
                           double* dlogits, std::size_t* count) {
  double loss = 0.0;
  std::size_t n = 0;
  std::vector<double> prob(v);
  for (std::size_t l = 0; l < s; ++l) {
    const double* row = logits + l * v;
    if (targets[l] == kPad) {
      if (dlogits) std::fill(dlogits + l * v, dlogits + (l + 1) * v, 0.0);
      continue;
    }
    std::copy(row, row + v, prob.begin());
    const double mx = *std::max_element(prob.begin(), prob.end());
    double z = 0.0;
    for (double x : prob) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[targets[l]];
    ++n;
    if (dlogits) {
      for (std::size_t j = 0; j < v; ++j) dlogits[l * v + j] = std::exp(row[j] - lse);
      dlogits[l * v + targets[l]] -= 1.0;
    }
  }
  if (count) *count = n;
  return loss;
}

}  // namespace generator

// ---- batch and inference forms ----

ImportanceScores road_importance(const Tensor& x_traffic, const GeneratorConfig& cfg, const GeneratorParams& p) {
  if (x_traffic.rank() != 4 || x_traffic.dim(3) != cfg.features) {
    throw DimensionError("road_importance: expected [B,T,N,F] with F=" + std::to_string(cfg.features) + ", got " +
                         shape_string(x_traffic.shape()));
  }
  const std::size_t bsz = x_traffic.dim(0), t = x_traffic.dim(1), n = x_traffic.dim(2), f = cfg.features;
  ImportanceScores out{Tensor({bsz, t, n, 1}), {}};
  const std::size_t h = cfg.detector_hidden;
  nn::Buffer pre(n * h), score(n);
  for (std::size_t i = 0; i < bsz * t; ++i) {
    const double* x = x_traffic.data() + i * n * f;
    nn::linear_forward(x, n, p.det_w1, &p.det_b1, pre.data());
    for (double& v : pre) v = std::max(0.0, v);
    nn::linear_forward(pre.data(), n, p.det_w2, &p.det_b2, score.data());
    for (std::size_t j = 0; j < n; ++j) out.scores[i * n + j] = ctl::detail::sigmoid(score[j]);
    out.selected.push_back(
        ctl::detail::topk_indices(out.scores.data() + i * n, n, selection_count(n, cfg.select_ratio)));
  }
  return out;
}

Tensor road_cross_attention(const Tensor& h_text, const Tensor& node_feats, const ImportanceScores& importance,
                            const GeneratorConfig& cfg, const GeneratorParams& p) {
  if (h_text.rank() != 4 || node_feats.rank() != 4 || h_text.dim(0) != node_feats.dim(0) ||
      h_text.dim(1) != node_feats.dim(1) || h_text.dim(3) != cfg.dim || node_feats.dim(3) != cfg.dim) {
    throw DimensionError("road_cross_attention: expected [B,T,L,D] and [B,T,N,D], got " +
                         shape_string(h_text.shape()) + " and " + shape_string(node_feats.shape()));
  }
  const std::size_t bt = h_text.dim(0) * h_text.dim(1), l = h_text.dim(2), n = node_feats.dim(2), d = cfg.dim;
  if (importance.selected.size() != bt || importance.scores.size() != bt * n) {
    throw DimensionError("road_cross_attention: importance does not match the batch");
  }
  Tensor out(h_text.shape());
  nn::MhaCache cache;
  nn::Buffer kv, mod(l * d), gin(l * 2 * d), gate(l * d);
  for (std::size_t i = 0; i < bt; ++i) {
    const auto& sel = importance.selected[i];
    kv.assign(sel.size() * d, 0.0);
    for (std::size_t k = 0; k < sel.size(); ++k) {
      const double w = importance.scores[i * n + sel[k]];
      for (std::size_t j = 0; j < d; ++j) kv[k * d + j] = w * node_feats[(i * n + sel[k]) * d + j];
    }
    const double* q = h_text.data() + i * l * d;
    nn::mha_forward(p.xattn, q, l, kv.data(), sel.size(), cfg.heads, nullptr, false, mod.data(), cache);
    for (std::size_t r = 0; r < l; ++r) {
      std::copy(q + r * d, q + (r + 1) * d, gin.data() + r * 2 * d);
      std::copy(mod.data() + r * d, mod.data() + (r + 1) * d, gin.data() + r * 2 * d + d);
    }
    nn::linear_forward(gin.data(), l, p.gate_w, &p.gate_b, gate.data());
    double* o = out.data() + i * l * d;
    for (std::size_t j = 0; j < l * d; ++j) o[j] = q[j] + ctl::detail::sigmoid(gate[j]) * mod[j];
  }
  return out;
}

Tensor memory_read(const Tensor& h, const GeneratorConfig& cfg, const GeneratorParams& p) {
  if (h.cols() != cfg.dim || h.rank() < 2) {
    throw DimensionError("memory_read: expected [...,L,D] with D=" + std::to_string(cfg.dim));
  }
  const std::size_t d = cfg.dim;
  const std::size_t l = h.dim(h.rank() - 2);
  const std::size_t m = p.mem_keys.dim(0);
  const std::size_t seqs = h.size() / (l * d);
  Tensor out = h;
  nn::Buffer q(l * d), ctx(l * d), probs(cfg.heads * l * m), read(l * d);
  for (std::size_t i = 0; i < seqs; ++i) {
    const double* x = h.data() + i * l * d;
    nn::linear_forward(x, l, p.mem_wq, nullptr, q.data());
    nn::attention_forward(q.data(), p.mem_keys.data(), p.mem_values.data(), {l, m, d, cfg.heads}, nullptr, false,
                          ctx.data(), probs.data());
    nn::linear_forward(ctx.data(), l, p.mem_wo, nullptr, read.data());
    kernels::axpy(1.0, read.data(), out.data() + i * l * d, l * d);
  }
  return out;
}

Tensor lora_apply(const Tensor& w, const LoraAdapter& adapter, const Tensor& x, RngState* rng) {
  if (w.rank() != 2 || adapter.a.rank() != 2 || adapter.b.rank() != 2) {
    throw DimensionError("lora_apply: weights must be matrices");
  }
  const std::size_t in = w.dim(0), out = w.dim(1), r = adapter.a.dim(0);
  if (r == 0 || r > std::min(in, out)) {
    throw ConfigError("lora_apply: rank " + std::to_string(r) + " exceeds min(" + std::to_string(in) + "," +
                      std::to_string(out) + ")");
  }
  if (adapter.a.dim(1) != in || adapter.b.dim(0) != out || adapter.b.dim(1) != r) {
    throw DimensionError("lora_apply: adapter shapes do not match the base weight");
  }
  if (x.cols() != in) throw DimensionError("lora_apply: input width does not match the base weight");
  Tensor::Shape shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  const std::size_t m = x.rows();
  nn::LoraCache cache;
  nn::Buffer keep;
  const bool dropout = rng && adapter.dropout > 0.0;
  if (dropout) {
    keep.resize(m * r);
    const double inv = 1.0 / (1.0 - adapter.dropout);
    for (double& k : keep) k = rng->bernoulli(adapter.dropout) ? 0.0 : inv;
  }
  nn::lora_forward(x.data(), m, w, adapter.a, adapter.b, adapter.alpha / static_cast<double>(r),
                   dropout ? &keep : nullptr, y.data(), cache);
  return y;
}

TextGenerator::TextGenerator(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                             const Tensor& traffic, const Tensor& a_mix)
    : cfg_(cfg), p_(p), flags_(flags) {
  if (traffic.size() != cfg.n_nodes * cfg.features) {
    throw DimensionError("TextGenerator: traffic must be [N,F] = [" + std::to_string(cfg.n_nodes) + "," +
                         std::to_string(cfg.features) + "]");
  }
  if (a_mix.size() != cfg.n_nodes * cfg.n_nodes) throw DimensionError("TextGenerator: adjacency must be [N,N]");
  generator::condition_forward(cfg, p, flags, traffic.data(), a_mix.data(), nullptr, cond_);
}

std::vector<double> TextGenerator::step(const std::vector<TokenId>& prefix) const {
  if (prefix.empty()) throw ParameterError("lm_step: empty prefix");
  const std::size_t v = cfg_.vocab;
  std::vector<double> logits(prefix.size() * v);
  generator::DecoderCache cache;
  generator::decoder_forward(cfg_, p_, flags_, cond_, prefix.data(), prefix.size(), nullptr, logits.data(), cache);
  std::vector<double> probs(logits.end() - static_cast<std::ptrdiff_t>(v), logits.end());
  ctl::detail::softmax_inplace(probs.data(), v);
  return probs;
}

TokenSequence TextGenerator::greedy_decode(std::size_t max_len) const {
  if (max_len < 2) throw ParameterError("greedy_decode: max_len must be >= 2");
  std::vector<TokenId> ids{kBos};
  while (ids.size() < max_len) {
    const std::vector<double> probs = step(ids);
    // PAD and BOS are never emitted so the PAD-suffix layout holds.
    TokenId best = kEos;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      const auto id = static_cast<TokenId>(j);
      if (id == kPad || id == kBos) continue;
      if (probs[j] > probs[static_cast<std::size_t>(best)] || (probs[j] == probs[best] && id < best)) best = id;
    }
    if (ids.size() + 1 == max_len) best = kEos;
    ids.push_back(best);
    if (best == kEos) break;
  }
  ids.resize(max_len, kPad);
  return TokenSequence{std::move(ids)};
}

std::vector<double> lm_step(const std::vector<TokenId>& tokens_so_far, const TextGenerator& gen) {
  return gen.step(tokens_so_far);
}

TokenSequence greedy_decode(const TextGenerator& gen, std::size_t max_len) { return gen.greedy_decode(max_len); }

}  // namespace ctl
