#include "ctl/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "ctl/fusion.hpp"
#include "ctl/generator.hpp"
#include "ctl/grad_check.hpp"
#include "ctl/kernels.hpp"
#include "ctl/metrics.hpp"
#include "ctl/model.hpp"
#include "ctl/predictor.hpp"
#include "ctl/rng.hpp"
#include "ctl/text_encoder.hpp"

namespace ctl {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

std::vector<std::string> VerifyReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name + ": " + c.detail);
  }
  return out;
}

namespace {

// Probe sizes: one sample, 3 nodes, 8 steps, width 8.
ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.n_nodes = 3;
  cfg.window = 8;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.text_length = 6;
  cfg.vocab = 12;
  cfg.node_embed_dim = 4;
  cfg.detector_hidden = 5;
  cfg.lora_rank = 4;
  cfg.lora_alpha = 8.0;
  cfg.memory_slots = 4;
  return cfg;
}

double readout(const double* y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += y[i] * r[i];
  return s;
}

VerifyCheck from_report(std::string name, const GradCheckReport& rep) {
  return VerifyCheck{std::move(name), rep.passed, rep.summary()};
}

Tensor row_stochastic(std::size_t n, RngState& rng) {
  Tensor a = random_uniform({n, n}, 0.1, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= s;
  }
  return a;
}

Tensor path_adjacency(std::size_t n) {
  Tensor adj({n, n});
  for (std::size_t i = 0; i + 1 < n; ++i) adj.at(i, i + 1) = adj.at(i + 1, i) = 1.0;
  return adj;
}

VerifyCheck text_encoder_probe(std::uint64_t seed, const GradCheckOptions& gopt) {
  const ModelConfig cfg = probe_config();
  RngState rng = RngState(seed).fork(11);
  TextEncoderParams p = TextEncoderParams::init(cfg.vocab, cfg.dim, rng);
  TextEncoderParams g = TextEncoderParams::zeros(cfg.vocab, cfg.dim);
  const std::vector<TokenId> ids{kBos, 5, 7, 9, kEos, kPad};
  const Tensor r = random_normal({ids.size(), cfg.dim}, 1.0, rng);
  nn::Buffer out(ids.size() * cfg.dim);
  auto loss = [&] {
    TextEncoderCache c;
    text_encoder_forward(p, ids.data(), ids.size(), out.data(), c);
    return readout(out.data(), r);
  };
  ParamList pl, gl;
  p.collect(pl, "text");
  g.collect(gl, "text");
  TextEncoderCache c;
  text_encoder_forward(p, ids.data(), ids.size(), out.data(), c);
  text_encoder_backward(p, c, r.data(), g);
  return from_report("grad text_encoder seed " + std::to_string(seed), grad_check(loss, pl, gl, gopt));
}

// sparse_align -> film -> adaptive adjacency -> gcn, with inputs as probe tensors.
VerifyCheck fusion_probe(std::uint64_t seed, const GradCheckOptions& gopt) {
  const ModelConfig cfg = probe_config();
  const std::size_t s = cfg.window / cfg.patch, n = cfg.n_nodes, d = cfg.dim, l = cfg.text_length;
  RngState rng = RngState(seed).fork(12);
  FusionParams p = FusionParams::init(d, n, cfg.node_embed_dim, rng);
  FusionParams g = FusionParams::zeros(d, n, cfg.node_embed_dim);
  // Larger FiLM weights keep the sigmoid/tanh away from their linear range.
  p.w_alpha = random_normal(p.w_alpha.shape(), 0.5, rng);
  p.w_beta = random_normal(p.w_beta.shape(), 0.5, rng);
  Tensor h = random_normal({s, n, d}, 1.0, rng), dh({s, n, d});
  Tensor text = random_normal({l, d}, 1.0, rng), dtext({l, d});
  const Tensor phys = normalized_adjacency(path_adjacency(n));
  const Tensor r = random_normal({s, n, d}, 1.0, rng);
  const std::size_t top_k = default_top_k(l);

  struct Pass {
    nn::Buffer q, c, y, a, z;
    fusion::AlignCache align;
    fusion::FilmCache film;
    fusion::AdjacencyCache adj;
    fusion::GcnCache gcn;
  };
  auto forward = [&](Pass& ps, const std::uint8_t* mask) {
    ps.q.assign(s * d, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < d; ++k) ps.q[i * d + k] += h[(i * n + j) * d + k] / static_cast<double>(n);
      }
    }
    ps.c.assign(s * d, 0.0);
    fusion::align_forward(ps.q.data(), s, text.data(), l, d, top_k, mask, ps.c.data(), ps.align);
    ps.y.assign(s * n * d, 0.0);
    fusion::film_forward(p, ps.c.data(), h.data(), s, n, cfg.eta, ps.y.data(), ps.film);
    ps.a.assign(n * n, 0.0);
    fusion::adjacency_forward(p.node_embed, phys, ps.a.data(), ps.adj);
    ps.z.assign(s * n * d, 0.0);
    fusion::gcn_forward(ps.a.data(), ps.y.data(), s, n, p.gcn_w, p.gcn_b, ps.z.data(), ps.gcn);
    return readout(ps.z.data(), r);
  };
  Pass base;
  forward(base, nullptr);
  const std::vector<std::uint8_t> mask = base.align.mask;
  {
    nn::Buffer dy(s * n * d, 0.0), da(n * n, 0.0), dc(s * d, 0.0), dq(s * d, 0.0);
    fusion::gcn_backward(base.a.data(), base.y.data(), s, n, p.gcn_w, base.gcn, r.data(), dy.data(), da.data(),
                         g.gcn_w, g.gcn_b);
    fusion::adjacency_backward(p.node_embed, base.adj, da.data(), g.node_embed);
    fusion::film_backward(p, base.c.data(), h.data(), s, n, cfg.eta, base.film, dy.data(), dc.data(), dh.data(), g);
    fusion::align_backward(base.q.data(), s, text.data(), l, d, base.align, dc.data(), dq.data(), dtext.data());
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < d; ++k) dh[(i * n + j) * d + k] += dq[i * d + k] / static_cast<double>(n);
      }
    }
  }
  auto loss = [&] {
    Pass ps;
    return forward(ps, mask.data());
  };
  ParamList pl, gl;
  p.collect(pl, "fusion");
  g.collect(gl, "fusion");
  pl.push_back({"fusion.input.h_traffic", &h});
  gl.push_back({"fusion.input.h_traffic", &dh});
  pl.push_back({"fusion.input.h_text", &text});
  gl.push_back({"fusion.input.h_text", &dtext});
  return from_report("grad fusion seed " + std::to_string(seed), grad_check(loss, pl, gl, gopt));
}

VerifyCheck predictor_probe(std::uint64_t seed, const GradCheckOptions& gopt) {
  const ModelConfig mc = probe_config();
  const PredictorConfig cfg = mc.predictor();
  const std::size_t n = mc.n_nodes;
  RngState rng = RngState(seed).fork(13);
  PredictorParams p = PredictorParams::init(cfg, rng);
  PredictorParams g = PredictorParams::zeros(cfg);
  const Tensor x = random_normal({cfg.window, n, cfg.channels}, 1.0, rng);
  const Tensor r = random_normal({cfg.window, n, cfg.channels}, 1.0, rng);
  const std::size_t hsize = cfg.patches() * n * cfg.dim;
  auto run = [&](predictor::EncoderCache& cache, nn::Buffer& h, nn::Buffer& y) {
    h.assign(hsize, 0.0);
    y.assign(x.size(), 0.0);
    predictor::patch_embed_forward(cfg, p, x.data(), n, h.data());
    predictor::encode_decode_forward(cfg, p, h.data(), n, y.data(), cache);
    return readout(y.data(), r);
  };
  auto loss = [&] {
    predictor::EncoderCache cache;
    nn::Buffer h, y;
    return run(cache, h, y);
  };
  {
    predictor::EncoderCache cache;
    nn::Buffer h, y, dh(hsize, 0.0);
    run(cache, h, y);
    predictor::encode_decode_backward(cfg, p, r.data(), n, cache, dh.data(), g);
    predictor::patch_embed_backward(cfg, p, x.data(), n, dh.data(), g);
  }
  ParamList pl, gl;
  p.collect(pl, "predictor");
  g.collect(gl, "predictor");
  return from_report("grad predictor seed " + std::to_string(seed), grad_check(loss, pl, gl, gopt));
}

VerifyCheck generator_probe(std::uint64_t seed, const AblationFlags& flags, const GradCheckOptions& gopt) {
  const ModelConfig mc = probe_config();
  const GeneratorConfig cfg = mc.generator();
  RngState rng = RngState(seed).fork(14);
  GeneratorParams p = GeneratorParams::init(cfg, rng);
  GeneratorParams g = GeneratorParams::zeros(cfg);
  // Nonzero adapter B so the low-rank path carries gradient.
  for (auto& layer : p.layers) {
    layer.bq = random_normal(layer.bq.shape(), 0.3, rng);
    layer.bv = random_normal(layer.bv.shape(), 0.3, rng);
  }
  Tensor x = random_normal({cfg.n_nodes, cfg.features}, 1.0, rng), dx({cfg.n_nodes, cfg.features});
  Tensor a = row_stochastic(cfg.n_nodes, rng), da({cfg.n_nodes, cfg.n_nodes});
  const std::vector<TokenId> tokens{kBos, 5, 7, 9, kEos};
  const Tensor r = random_normal({tokens.size(), cfg.vocab}, 1.0, rng);
  nn::Buffer logits(tokens.size() * cfg.vocab);

  generator::ConditionCache cond;
  generator::condition_forward(cfg, p, flags, x.data(), a.data(), nullptr, cond);
  const std::vector<std::size_t> selection = cond.selected;
  {
    generator::DecoderCache dc;
    generator::decoder_forward(cfg, p, flags, cond, tokens.data(), tokens.size(), nullptr, logits.data(), dc);
    nn::Buffer dkv(cond.kv.size(), 0.0), dctx(cfg.dim, 0.0);
    generator::decoder_backward(cfg, p, flags, cond, dc, r.data(), dkv.data(), dctx.data(), g);
    generator::condition_backward(cfg, p, flags, cond, dkv.data(), dctx.data(), da.data(), dx.data(), g);
  }
  auto loss = [&] {
    generator::ConditionCache cc;
    generator::condition_forward(cfg, p, flags, x.data(), a.data(), &selection, cc);
    generator::DecoderCache dc;
    generator::decoder_forward(cfg, p, flags, cc, tokens.data(), tokens.size(), nullptr, logits.data(), dc);
    return readout(logits.data(), r);
  };
  ParamList pl, gl;
  p.collect(pl, "generator");
  g.collect(gl, "generator");
  pl.push_back({"generator.input.traffic", &x});
  gl.push_back({"generator.input.traffic", &dx});
  pl.push_back({"generator.input.a_mix", &a});
  gl.push_back({"generator.input.a_mix", &da});
  return from_report("grad generator [" + describe(flags) + "] seed " + std::to_string(seed),
                     grad_check(loss, pl, gl, gopt));
}

VerifyCheck joint_probe(std::uint64_t seed, const AblationFlags& flags, bool teacher_forcing,
                        const GradCheckOptions& gopt) {
  ModelConfig cfg = probe_config();
  cfg.flags = flags;
  cfg.teacher_forcing = teacher_forcing;
  ModelParams p = ModelParams::init(cfg, seed);
  RngState rng = RngState(seed).fork(15);
  for (auto& layer : p.generator.layers) {
    layer.bq = random_normal(layer.bq.shape(), 0.3, rng);
    layer.bv = random_normal(layer.bv.shape(), 0.3, rng);
  }
  Sample s;
  s.x_hist = random_normal({cfg.window, cfg.n_nodes, 1}, 1.0, rng);
  s.y_future = random_normal({cfg.window, cfg.n_nodes, 1}, 1.0, rng);
  s.text_hist.ids = {kBos, 5, 7, 9, kEos, kPad};
  s.text_future.ids = {kBos, 6, 4, kEos, kPad, kPad};
  const Tensor adj = normalized_adjacency(path_adjacency(cfg.n_nodes));
  const std::vector<const Sample*> batch{&s};

  ModelParams g = ModelParams::zeros(cfg);
  std::vector<SampleMasks> masks;
  LossOptions rec;
  rec.masks = &masks;
  batch_loss(cfg, p, adj, batch, rec, &g);
  LossOptions fixed;
  fixed.masks = &masks;
  fixed.masks_fixed = true;
  auto loss = [&] { return batch_loss(cfg, p, adj, batch, fixed, nullptr).total; };
  std::string name = "grad joint_loss [" + describe(flags) + (teacher_forcing ? "" : ", free-running") + "] seed " +
                     std::to_string(seed);
  return from_report(std::move(name), grad_check(loss, p.collect(), g.collect(), gopt));
}

// ---- straight-line references ----

using Grams = std::vector<Tokens>;

Grams grams_of(const Tokens& t, std::size_t n) {
  Grams out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                                   t.begin() + static_cast<std::ptrdiff_t>(i + n));
  return out;
}

std::size_t occurrences(const Grams& gs, const Tokens& g) {
  return static_cast<std::size_t>(std::count(gs.begin(), gs.end(), g));
}

double ref_bleu(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty()) return 0.0;
  double prod = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const Grams hg = grams_of(hyp, n), rg = grams_of(ref, n);
    if (hg.empty()) return 0.0;
    double clipped = 0.0;
    // each distinct hyp n-gram once
    for (std::size_t i = 0; i < hg.size(); ++i) {
      if (std::find(hg.begin(), hg.begin() + static_cast<std::ptrdiff_t>(i), hg[i]) !=
          hg.begin() + static_cast<std::ptrdiff_t>(i))
        continue;
      clipped += static_cast<double>(std::min(occurrences(hg, hg[i]), occurrences(rg, hg[i])));
    }
    if (clipped == 0.0) return 0.0;
    prod *= clipped / static_cast<double>(hg.size());
  }
  const double c = static_cast<double>(hyp.size()), r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::pow(prod, 0.25);
}

double ref_meteor(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::vector<int> pos;
  std::vector<bool> taken(ref.size(), false);
  for (const auto& w : hyp) {
    int found = -1;
    for (std::size_t j = 0; j < ref.size() && found < 0; ++j) {
      if (!taken[j] && ref[j] == w) found = static_cast<int>(j);
    }
    if (found >= 0) taken[static_cast<std::size_t>(found)] = true;
    pos.push_back(found);
  }
  double m = 0.0, chunks = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (pos[i] < 0) continue;
    m += 1.0;
    const bool continues = i > 0 && pos[i - 1] >= 0 && pos[i] == pos[i - 1] + 1;
    if (!continues) chunks += 1.0;
  }
  if (m == 0.0) return 0.0;
  const double p = m / static_cast<double>(hyp.size()), r = m / static_cast<double>(ref.size());
  const double f = p * r / (0.9 * p + 0.1 * r);
  return (1.0 - 0.5 * std::pow(chunks / m, 3.0)) * f;
}

std::size_t ref_lcs(const Tokens& x, const Tokens& y, std::size_t i, std::size_t j,
                    std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == x.size() || j == y.size()) return 0;
  const auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  const std::size_t v = x[i] == y[j] ? 1 + ref_lcs(x, y, i + 1, j + 1, memo)
                                     : std::max(ref_lcs(x, y, i + 1, j, memo), ref_lcs(x, y, i, j + 1, memo));
  memo[key] = v;
  return v;
}

std::size_t ref_lcs(const Tokens& x, const Tokens& y) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  return ref_lcs(x, y, 0, 0, memo);
}

double ref_rouge(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(ref_lcs(hyp, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(hyp.size()), r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

Tokens random_tokens(RngState& rng, std::size_t alphabet) {
  const std::size_t len = 1 + static_cast<std::size_t>(rng.below(20));
  Tokens t;
  for (std::size_t i = 0; i < len; ++i) t.push_back("w" + std::to_string(rng.below(alphabet)));
  return t;
}

Tokens split(const std::string& s) {
  Tokens out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

VerifyCheck metric_check(std::uint64_t seed) {
  RngState rng = RngState(seed).fork(21);
  double worst = 0.0;
  std::string where;
  auto note = [&](double a, double b, const std::string& what) {
    const double e = std::abs(a - b);
    if (e > worst) {
      worst = e;
      where = what;
    }
  };
  for (int i = 0; i < 100; ++i) {
    // Small alphabets so that higher-order n-grams actually match.
    const std::size_t alphabet = 2 + static_cast<std::size_t>(rng.below(5));
    Tokens h = random_tokens(rng, alphabet), r = random_tokens(rng, alphabet);
    if (i % 10 == 0) r = h;
    note(bleu4(h, r), ref_bleu(h, r), "bleu4");
    note(meteor(h, r), ref_meteor(h, r), "meteor");
    note(rouge_l(h, r), ref_rouge(h, r), "rouge_l");
    note(static_cast<double>(lcs_length(h, r)), static_cast<double>(ref_lcs(h, r)), "lcs_length");
  }
  const double worked_bleu = 100.0 * std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
  note(bleu4(split("a b c d e"), split("a b c d f")), worked_bleu, "bleu4 worked example");
  note(rouge_l(split("a c d"), split("a b c d")), 6.0 / 7.0, "rouge_l worked example");
  note(meteor(split("a b c"), split("a b d")), 0.625, "meteor worked example");
  Tokens x, y;
  for (char ch : std::string("ABCBDAB")) x.emplace_back(1, ch);
  for (char ch : std::string("BDCABA")) y.emplace_back(1, ch);
  note(static_cast<double>(lcs_length(x, y)), 4.0, "lcs worked example");
  std::ostringstream os;
  os << "max |diff| " << worst << (where.empty() ? "" : " (" + where + ")");
  return VerifyCheck{"oracle metrics seed " + std::to_string(seed), worst <= 1e-9, os.str()};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// rows of q attend over rows of k/v (heads split the width), masked keys skipped
void ref_attention(const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v,
                   std::size_t sq, std::size_t sk, std::size_t d, std::size_t heads, const std::vector<bool>& keep,
                   std::vector<double>& out) {
  const std::size_t dh = d / heads;
  out.assign(sq * d, 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < sq; ++i) {
      std::vector<double> sc(sk, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < sk; ++j) {
        if (!keep[j]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * d + hd * dh + c] * k[j * d + hd * dh + c];
        sc[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, sc[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < sk; ++j) z += keep[j] ? std::exp(sc[j] - mx) : 0.0;
      for (std::size_t j = 0; j < sk; ++j) {
        if (!keep[j]) continue;
        const double w = std::exp(sc[j] - mx) / z;
        for (std::size_t c = 0; c < dh; ++c) out[i * d + hd * dh + c] += w * v[j * d + hd * dh + c];
      }
    }
  }
}

std::vector<double> ref_matmul(const double* x, std::size_t m, const Tensor& w) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(m * out, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t c = 0; c < in; ++c) s += x[i * in + c] * w.at(c, o);
      y[i * out + o] = s;
    }
  }
  return y;
}

std::vector<double> ref_mha(const nn::MhaWeights& w, const double* xq, std::size_t sq, const double* xkv,
                            std::size_t sk, std::size_t heads, const std::vector<bool>& keep) {
  const std::size_t d = w.wq.dim(0);
  std::vector<double> ctx;
  ref_attention(ref_matmul(xq, sq, w.wq), ref_matmul(xkv, sk, w.wk), ref_matmul(xkv, sk, w.wv), sq, sk, d, heads,
                keep, ctx);
  return ref_matmul(ctx.data(), sq, w.wo);
}

nn::MhaWeights random_mha(std::size_t d, RngState& rng) {
  nn::MhaWeights w;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  w.wq = random_normal({d, d}, sd, rng);
  w.wk = random_normal({d, d}, sd, rng);
  w.wv = random_normal({d, d}, sd, rng);
  w.wo = random_normal({d, d}, sd, rng);
  return w;
}

VerifyCheck attention_check(std::uint64_t seed) {
  RngState rng = RngState(seed).fork(22);
  const std::size_t b = 2, s = 3, l = 5, d = 8, n = 7;
  std::ostringstream os;
  bool ok = true;

  // dense alignment equals top_k = L
  const Tensor h = random_normal({b, s, d}, 1.0, rng), text = random_normal({b, l, d}, 1.0, rng);
  const AlignedContext ac = sparse_align(h, text, l);
  Tensor dense({b, s, d});
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> q(h.data() + i * s * d, h.data() + (i + 1) * s * d);
    std::vector<double> kv(text.data() + i * l * d, text.data() + (i + 1) * l * d);
    std::vector<double> o;
    ref_attention(q, kv, kv, s, l, d, 1, std::vector<bool>(l, true), o);
    std::copy(o.begin(), o.end(), dense.data() + i * s * d);
  }
  const double e_align = max_abs_diff(ac.c_text, dense);
  ok = ok && e_align <= 1e-12;
  os << "align " << e_align;

  // multi-head self-attention
  const nn::MhaWeights w = random_mha(d, rng);
  const Tensor x = random_normal({b, s, d}, 1.0, rng);
  const Tensor y = mhsa(x, w, 2);
  Tensor y_ref({b, s, d});
  for (std::size_t i = 0; i < b; ++i) {
    const auto o = ref_mha(w, x.data() + i * s * d, s, x.data() + i * s * d, s, 2, std::vector<bool>(s, true));
    std::copy(o.begin(), o.end(), y_ref.data() + i * s * d);
  }
  const double e_mhsa = max_abs_diff(y, y_ref);
  ok = ok && e_mhsa <= 1e-12;
  os << ", mhsa " << e_mhsa;

  // road cross-attention against all-node attention with unselected keys masked
  GeneratorConfig gc;
  gc.n_nodes = n;
  gc.features = 4;
  gc.dim = d;
  gc.heads = 2;
  gc.vocab = 10;
  gc.lora_rank = 4;
  gc.lora_alpha = 8.0;
  gc.memory_slots = 3;
  GeneratorParams gp = GeneratorParams::init(gc, rng);
  gp.xattn = random_mha(d, rng);
  gp.gate_w = random_normal(gp.gate_w.shape(), 0.5, rng);
  const Tensor traffic = random_normal({b, 1, n, gc.features}, 1.0, rng);
  const ImportanceScores imp = road_importance(traffic, gc, gp);
  const Tensor feats = random_normal({b, 1, n, d}, 1.0, rng), q = random_normal({b, 1, l, d}, 1.0, rng);
  const Tensor fused = road_cross_attention(q, feats, imp, gc, gp);
  Tensor fused_ref({b, 1, l, d});
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<bool> keep(n, false);
    for (std::size_t j : imp.selected[i]) keep[j] = true;
    std::vector<double> kv(n * d);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < d; ++c) kv[j * d + c] = imp.scores[i * n + j] * feats[(i * n + j) * d + c];
    }
    const double* qi = q.data() + i * l * d;
    const auto mod = ref_mha(gp.xattn, qi, l, kv.data(), n, 2, keep);
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t o = 0; o < d; ++o) {
        double z = gp.gate_b[o];
        for (std::size_t c = 0; c < d; ++c) z += qi[r * d + c] * gp.gate_w.at(c, o);
        for (std::size_t c = 0; c < d; ++c) z += mod[r * d + c] * gp.gate_w.at(d + c, o);
        fused_ref[(i * l + r) * d + o] = qi[r * d + o] + mod[r * d + o] / (1.0 + std::exp(-z));
      }
    }
  }
  const double e_road = max_abs_diff(fused, fused_ref);
  ok = ok && e_road <= 1e-12;
  os << ", road_xattn " << e_road;

  // memory read
  const Tensor hm = random_normal({b, 1, l, d}, 1.0, rng);
  const Tensor mem = memory_read(hm, gc, gp);
  Tensor mem_ref = hm;
  for (std::size_t i = 0; i < b; ++i) {
    const double* xi = hm.data() + i * l * d;
    std::vector<double> ctx;
    ref_attention(ref_matmul(xi, l, gp.mem_wq), gp.mem_keys.storage(), gp.mem_values.storage(), l,
                  gc.memory_slots, d, gc.heads, std::vector<bool>(gc.memory_slots, true), ctx);
    const auto read = ref_matmul(ctx.data(), l, gp.mem_wo);
    for (std::size_t j = 0; j < l * d; ++j) mem_ref[i * l * d + j] += read[j];
  }
  const double e_mem = max_abs_diff(mem, mem_ref);
  ok = ok && e_mem <= 1e-12;
  os << ", memory " << e_mem;
  return VerifyCheck{"oracle attention seed " + std::to_string(seed), ok, os.str()};
}

VerifyCheck invariant_check(std::uint64_t seed) {
  RngState rng = RngState(seed).fork(23);
  std::vector<std::string> bad;

  for (std::size_t n : {2u, 5u, 13u}) {
    const Tensor a = adaptive_adjacency(random_normal({n, 4}, 1.5, rng));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
      if (std::abs(s - 1.0) > 1e-9) bad.push_back("adaptive adjacency row sum " + std::to_string(s));
    }
  }

  {
    const std::size_t d = 6;
    RngState frng = rng.fork(1);
    FusionParams fp = FusionParams::init(d, 3, 4, frng);
    const Tensor h = random_normal({2, 3, 4, d}, 1.0, rng);
    AlignedContext zero_ctx{Tensor({2, 3, d}), Tensor({2, 3, 5})};
    const Tensor y = film_modulate(h, zero_ctx, fp);
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (y[i] != 0.5 * h[i]) {
        bad.push_back("film with zero context differs from 0.5*h");
        break;
      }
    }
  }

  for (std::size_t n = 1; n <= 50; ++n) {
    GeneratorConfig gc;
    gc.n_nodes = n;
    gc.features = 3;
    gc.dim = 8;
    gc.heads = 2;
    gc.vocab = 8;
    gc.lora_rank = 4;
    gc.lora_alpha = 8.0;
    gc.memory_slots = 2;
    RngState grng = rng.fork(100 + n);
    const GeneratorParams gp = GeneratorParams::init(gc, grng);
    const ImportanceScores imp = road_importance(random_normal({1, 1, n, 3}, 1.0, rng), gc, gp);
    const std::size_t want = (3 * n + 9) / 10;  // ceil(0.3 n) in integers
    if (imp.selected.front().size() != want) {
      bad.push_back("N=" + std::to_string(n) + " selected " + std::to_string(imp.selected.front().size()));
    }
  }

  {
    const Tensor w = random_normal({8, 6}, 1.0, rng), x = random_normal({5, 8}, 1.0, rng);
    LoraAdapter ad{random_normal({4, 8}, 1.0, rng), Tensor({6, 4}), 8.0, 0.1};
    const Tensor y = lora_apply(w, ad, x);
    Tensor base({5, 6});
    nn::linear_forward(x.data(), 5, w, nullptr, base.data());
    if (!(y == base)) bad.push_back("zero-init LoRA output differs from the base projection");
  }

  {
    const ModelConfig mc = probe_config();
    const GeneratorConfig gc = mc.generator();
    RngState grng = rng.fork(7);
    GeneratorParams gp = GeneratorParams::init(gc, grng);
    for (auto& layer : gp.layers) layer.bq = random_normal(layer.bq.shape(), 0.3, rng);
    const Tensor traffic = random_normal({gc.n_nodes, gc.features}, 1.0, rng);
    const Tensor a = row_stochastic(gc.n_nodes, rng);
    generator::ConditionCache cond;
    generator::condition_forward(gc, gp, AblationFlags{}, traffic.data(), a.data(), nullptr, cond);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<TokenId> t1, t2;
      for (int i = 0; i < 6; ++i) t1.push_back(static_cast<TokenId>(rng.below(gc.vocab)));
      t2 = t1;
      const std::size_t cut = 1 + static_cast<std::size_t>(rng.below(5));
      for (std::size_t i = cut; i < t2.size(); ++i) t2[i] = static_cast<TokenId>(rng.below(gc.vocab));
      nn::Buffer l1(t1.size() * gc.vocab), l2(t2.size() * gc.vocab);
      generator::DecoderCache c1, c2;
      generator::decoder_forward(gc, gp, AblationFlags{}, cond, t1.data(), t1.size(), nullptr, l1.data(), c1);
      generator::decoder_forward(gc, gp, AblationFlags{}, cond, t2.data(), t2.size(), nullptr, l2.data(), c2);
      for (std::size_t i = 0; i < cut * gc.vocab; ++i) {
        if (std::abs(l1[i] - l2[i]) > 1e-12) {
          bad.push_back("decoder position before " + std::to_string(cut) + " sees later tokens");
          break;
        }
      }
    }
  }

  std::string detail = bad.empty() ? "all hold" : bad.front();
  if (bad.size() > 1) detail += " (+" + std::to_string(bad.size() - 1) + " more)";
  return VerifyCheck{"invariants seed " + std::to_string(seed), bad.empty(), detail};
}

VerifyCheck kernel_check(std::uint64_t seed) {
  using kernels::Backend;
  RngState rng = RngState(seed).fork(24);
  const kernels::KernelTable& ref = *kernels::table(Backend::Scalar);
  std::ostringstream os;
  bool ok = true;
  int compared = 0;
  for (Backend bk : {Backend::Avx2, Backend::Neon}) {
    const kernels::KernelTable* t = kernels::table(bk);
    if (!t) continue;
    ++compared;
    double worst = 0.0;
    for (std::size_t m : {1u, 3u, 7u, 17u}) {
      for (std::size_t n : {1u, 4u, 9u, 33u}) {
        for (std::size_t k : {1u, 5u, 16u, 31u}) {
          const Tensor a = random_normal({m * k}, 1.0, rng), b = random_normal({k * n}, 1.0, rng);
          const Tensor at = random_normal({k * m}, 1.0, rng), bt = random_normal({n * k}, 1.0, rng);
          const Tensor c0 = random_normal({m * n}, 1.0, rng);
          auto cmp = [&](const Tensor& x, const Tensor& y, double scale) {
            for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]) / scale);
          };
          const double scale = static_cast<double>(k) + 1.0;
          Tensor c1 = c0, c2 = c0;
          ref.gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
          t->gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
          cmp(c1, c2, scale);
          c1 = c0, c2 = c0;
          ref.gemm_nt(m, n, k, a.data(), k, bt.data(), k, c1.data(), n);
          t->gemm_nt(m, n, k, a.data(), k, bt.data(), k, c2.data(), n);
          cmp(c1, c2, scale);
          c1 = c0, c2 = c0;
          ref.gemm_tn(m, n, k, at.data(), m, b.data(), n, c1.data(), n);
          t->gemm_tn(m, n, k, at.data(), m, b.data(), n, c2.data(), n);
          cmp(c1, c2, scale);
          const double d1 = ref.dot(a.data(), at.data(), m * k), d2 = t->dot(a.data(), at.data(), m * k);
          worst = std::max(worst, std::abs(d1 - d2) / (static_cast<double>(m * k) + 1.0));
          Tensor y1 = at, y2 = at;
          ref.axpy(0.7, a.data(), y1.data(), m * k);
          t->axpy(0.7, a.data(), y2.data(), m * k);
          cmp(y1, y2, 1.0);
        }
      }
    }
    ok = ok && worst <= 1e-12;
    os << kernels::name(bk) << " vs scalar " << worst << "; ";
  }
  if (compared == 0) os << "scalar only on this host";
  return VerifyCheck{"kernels seed " + std::to_string(seed), ok, os.str()};
}

}  // namespace

std::vector<VerifyCheck> gradient_suite(const VerifyOptions& opts) {
  GradCheckOptions gopt;
  gopt.corrupt_factor = opts.corrupt_factor;
  AblationFlags no_importance;
  no_importance.use_importance = false;
  AblationFlags bare;
  bare.use_gcn = bare.use_importance = bare.use_xattn = bare.use_memory = false;
  AblationFlags no_text;
  no_text.use_text = false;

  std::vector<VerifyCheck> out;
  auto add = [&](VerifyCheck c) {
    if (opts.log) opts.log((c.passed ? "ok   " : "FAIL ") + c.name + "  " + c.detail);
    out.push_back(std::move(c));
  };
  for (std::uint64_t seed : opts.seeds) {
    gopt.seed = seed;
    add(text_encoder_probe(seed, gopt));
    add(fusion_probe(seed, gopt));
    add(predictor_probe(seed, gopt));
    add(generator_probe(seed, AblationFlags{}, gopt));
    add(generator_probe(seed, no_importance, gopt));
    add(generator_probe(seed, bare, gopt));
    add(joint_probe(seed, AblationFlags{}, true, gopt));
    add(joint_probe(seed, no_text, false, gopt));
  }
  return out;
}

std::vector<VerifyCheck> oracle_suite(std::uint64_t seed) {
  return {metric_check(seed), attention_check(seed), invariant_check(seed), kernel_check(seed)};
}

VerifyReport run_verify(const VerifyOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  VerifyReport rep;
  rep.checks = gradient_suite(opts);
  for (std::uint64_t seed : opts.seeds) {
    for (auto& c : oracle_suite(seed)) {
      if (opts.log) opts.log((c.passed ? "ok   " : "FAIL ") + c.name + "  " + c.detail);
      rep.checks.push_back(std::move(c));
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ctl
