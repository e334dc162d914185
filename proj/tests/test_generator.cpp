#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctl/error.hpp"
#include "ctl/grad_check.hpp"
#include "ctl/generator.hpp"
#include "oracles.hpp"

using namespace ctl;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.n_nodes = 5;
  c.features = 3;
  c.dim = 8;
  c.heads = 2;
  c.vocab = 9;
  c.layers = 2;
  c.detector_hidden = 5;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  c.lora_dropout = 0.0;
  c.memory_slots = 3;
  return c;
}

// init() leaves biases and LoRA B at zero; fill everything so no path is trivially dead.
GeneratorParams dense_params(const GeneratorConfig& cfg, std::uint64_t seed) {
  RngState rng(seed);
  GeneratorParams p = GeneratorParams::init(cfg, rng);
  ParamList pl;
  p.collect(pl, "g");
  for (auto& nt : pl) {
    if (nt.name.find("ln_gain") != std::string::npos) continue;
    const bool zero = std::all_of(nt.tensor->storage().begin(), nt.tensor->storage().end(),
                                  [](double v) { return v == 0.0; });
    if (zero) *nt.tensor = random_normal(nt.tensor->shape(), 0.3, rng);
  }
  return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> oracle_scores(const GeneratorParams& p, const oracle::Mat& x) {
  oracle::Mat h = oracle::matmul(x, oracle::to_mat(p.det_w1));
  for (auto& row : h)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + p.det_b1[j]);
  const oracle::Mat s = oracle::matmul(h, oracle::to_mat(p.det_w2));
  std::vector<double> out;
  for (const auto& row : s) out.push_back(sigmoid(row[0] + p.det_b2[0]));
  return out;
}

std::vector<std::size_t> oracle_topk(const std::vector<double>& s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TEST(Importance, SelectionCount) {
  EXPECT_EQ(selection_count(10), 3u);
  EXPECT_EQ(selection_count(1), 1u);
  EXPECT_EQ(selection_count(3), 1u);
  EXPECT_EQ(selection_count(4), 2u);
  for (std::size_t n = 1; n <= 60; ++n) {
    const std::size_t want = std::max<std::size_t>(1, (3 * n + 9) / 10);
    EXPECT_EQ(selection_count(n), want) << n;
  }
}

TEST(Importance, ScoresAndTopSelection) {
  GeneratorConfig cfg = small_config();
  cfg.n_nodes = 10;
  const GeneratorParams p = dense_params(cfg, 1);
  RngState rng(2);
  const Tensor x = random_normal({2, 3, 10, cfg.features}, 1.0, rng);
  const ImportanceScores imp = road_importance(x, cfg, p);
  ASSERT_EQ(imp.scores.shape(), (Tensor::Shape{2, 3, 10, 1}));
  ASSERT_EQ(imp.selected.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto s = oracle_scores(p, oracle::to_mat(x.data() + i * 10 * cfg.features, 10, cfg.features));
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_GT(imp.scores[i * 10 + j], 0.0);
      EXPECT_LT(imp.scores[i * 10 + j], 1.0);
      EXPECT_NEAR(imp.scores[i * 10 + j], s[j], 1e-12);
    }
    EXPECT_EQ(imp.selected[i], oracle_topk(s, 3));
  }
}

TEST(Importance, SingleNodeAlwaysSelected) {
  GeneratorConfig cfg = small_config();
  cfg.n_nodes = 1;
  const GeneratorParams p = dense_params(cfg, 3);
  RngState rng(4);
  const ImportanceScores imp = road_importance(random_normal({1, 1, 1, cfg.features}, 1.0, rng), cfg, p);
  EXPECT_EQ(imp.selected[0], (std::vector<std::size_t>{0}));
}

TEST(CrossAttention, MatchesMaskedDenseOracle) {
  GeneratorConfig cfg = small_config();
  cfg.n_nodes = 10;
  const GeneratorParams p = dense_params(cfg, 5);
  RngState rng(6);
  const std::size_t L = 4, N = 10, D = cfg.dim;
  const Tensor x = random_normal({1, 2, N, cfg.features}, 1.0, rng);
  const Tensor h = random_normal({1, 2, L, D}, 1.0, rng);
  const Tensor feats = random_normal({1, 2, N, D}, 1.0, rng);
  const ImportanceScores imp = road_importance(x, cfg, p);
  const Tensor out = road_cross_attention(h, feats, imp, cfg, p);
  ASSERT_EQ(out.shape(), h.shape());

  for (std::size_t t = 0; t < 2; ++t) {
    const auto& sel = imp.selected[t];
    // Every node enters as a key; unselected ones are masked out.
    oracle::Mat kv = oracle::to_mat(feats.data() + t * N * D, N, D);
    for (std::size_t j = 0; j < N; ++j)
      for (double& v : kv[j]) v *= imp.scores[t * N + j];
    const oracle::Mat hq = oracle::to_mat(h.data() + t * L * D, L, D);
    const oracle::Mat q = oracle::matmul(hq, oracle::to_mat(p.xattn.wq));
    const oracle::Mat k = oracle::matmul(kv, oracle::to_mat(p.xattn.wk));
    const oracle::Mat v = oracle::matmul(kv, oracle::to_mat(p.xattn.wv));
    auto keep = [&](std::size_t, std::size_t j) { return std::find(sel.begin(), sel.end(), j) != sel.end(); };
    const oracle::Mat mod = oracle::matmul(oracle::attention(q, k, v, cfg.heads, keep), oracle::to_mat(p.xattn.wo));
    double mod_max = 0.0, delta_max = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < D; ++j) {
        double g = p.gate_b[j];
        for (std::size_t i = 0; i < D; ++i) g += hq[l][i] * p.gate_w.at(i, j) + mod[l][i] * p.gate_w.at(D + i, j);
        const double want = hq[l][j] + sigmoid(g) * mod[l][j];
        const double got = out.at(0, t, l, j);
        EXPECT_NEAR(got, want, 1e-12);
        mod_max = std::max(mod_max, std::abs(mod[l][j]));
        delta_max = std::max(delta_max, std::abs(got - hq[l][j]));
      }
    }
    EXPECT_LE(delta_max, mod_max + 1e-15);
  }
}

TEST(CrossAttention, ZeroGateIsHalfModulation) {
  const GeneratorConfig cfg = small_config();
  GeneratorParams p = dense_params(cfg, 7);
  p.gate_w.fill(0.0);
  p.gate_b.fill(0.0);
  RngState rng(8);
  const std::size_t N = cfg.n_nodes, D = cfg.dim;
  const Tensor h = random_normal({1, 1, 3, D}, 1.0, rng);
  const Tensor feats = random_normal({1, 1, N, D}, 1.0, rng);
  const ImportanceScores imp = road_importance(random_normal({1, 1, N, cfg.features}, 1.0, rng), cfg, p);
  // With a single selected key every query gets that key's value row.
  ASSERT_EQ(imp.selected[0].size(), 2u);
  ImportanceScores one = imp;
  one.selected[0] = {imp.selected[0][1]};
  const std::size_t node = one.selected[0][0];
  const Tensor out = road_cross_attention(h, feats, one, cfg, p);
  oracle::Mat kv{std::vector<double>(D)};
  for (std::size_t j = 0; j < D; ++j) kv[0][j] = imp.scores[node] * feats.at(0, 0, node, j);
  const oracle::Mat mod = oracle::matmul(oracle::matmul(kv, oracle::to_mat(p.xattn.wv)), oracle::to_mat(p.xattn.wo));
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < D; ++j) EXPECT_NEAR(out.at(0, 0, l, j), h.at(0, 0, l, j) + 0.5 * mod[0][j], 1e-12);
}

TEST(Memory, MatchesNaiveOracle) {
  const GeneratorConfig cfg = small_config();
  const GeneratorParams p = dense_params(cfg, 9);
  RngState rng(10);
  const Tensor h = random_normal({2, 4, cfg.dim}, 1.0, rng);
  const Tensor out = memory_read(h, cfg, p);
  for (std::size_t b = 0; b < 2; ++b) {
    const oracle::Mat x = oracle::to_mat(h.data() + b * 4 * cfg.dim, 4, cfg.dim);
    const oracle::Mat q = oracle::matmul(x, oracle::to_mat(p.mem_wq));
    const oracle::Mat ctx = oracle::attention(q, oracle::to_mat(p.mem_keys), oracle::to_mat(p.mem_values), cfg.heads);
    oracle::Mat want = oracle::matmul(ctx, oracle::to_mat(p.mem_wo));
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t j = 0; j < cfg.dim; ++j) want[l][j] += x[l][j];
    EXPECT_LT(oracle::max_abs_diff(want, out.data() + b * 4 * cfg.dim), 1e-12);
  }
}

TEST(Memory, SingleSlotReadsItsValue) {
  GeneratorConfig cfg = small_config();
  cfg.memory_slots = 1;
  const GeneratorParams p = dense_params(cfg, 11);
  RngState rng(12);
  const Tensor h = random_normal({3, cfg.dim}, 1.0, rng);
  const Tensor out = memory_read(h, cfg, p);
  const oracle::Mat read = oracle::matmul(oracle::to_mat(p.mem_values), oracle::to_mat(p.mem_wo));
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < cfg.dim; ++j) EXPECT_NEAR(out.at(l, j) - h.at(l, j), read[0][j], 1e-12);
}

TEST(Lora, ZeroBLeavesBaseUntouched) {
  RngState rng(13);
  const Tensor w = random_normal({6, 4}, 1.0, rng);
  const Tensor x = random_normal({5, 6}, 1.0, rng);
  const LoraAdapter ad{random_normal({3, 6}, 1.0, rng), Tensor({4, 3}), 24.0, 0.0};
  const Tensor y = lora_apply(w, ad, x);
  const oracle::Mat want = oracle::matmul(oracle::to_mat(x), oracle::to_mat(w));
  EXPECT_LT(oracle::max_abs_diff(want, y.data()), 1e-14);
}

TEST(Lora, ScalarHandEvaluation) {
  Tensor w({1, 1}), a({1, 1}), b({1, 1}), x({1, 1});
  w[0] = 3.0;
  a[0] = 1.0;
  b[0] = 3.0;
  x[0] = 1.0;
  // 3 + (2/1) * 1 * 3
  EXPECT_DOUBLE_EQ(lora_apply(w, {a, b, 2.0, 0.0}, x)[0], 9.0);
}

TEST(Lora, RankAboveMinDimThrows) {
  EXPECT_THROW(lora_apply(Tensor({4, 2}), {Tensor({3, 4}), Tensor({2, 3}), 24.0, 0.0}, Tensor({1, 4})), ConfigError);
  EXPECT_NO_THROW(lora_apply(Tensor({4, 2}), {Tensor({2, 4}), Tensor({2, 2}), 24.0, 0.0}, Tensor({1, 4})));
}

TEST(Lora, ScaleIsAlphaOverRank) {
  RngState rng(14);
  const Tensor w = random_normal({16, 16}, 1.0, rng);
  const Tensor x = random_normal({3, 16}, 1.0, rng);
  const LoraAdapter ad{random_normal({12, 16}, 1.0, rng), random_normal({16, 12}, 1.0, rng), 24.0, 0.0};
  const Tensor y = lora_apply(w, ad, x);
  const oracle::Mat base = oracle::matmul(oracle::to_mat(x), oracle::to_mat(w));
  oracle::Mat at(16, std::vector<double>(12)), bt(12, std::vector<double>(16));
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      at[j][i] = ad.a.at(i, j);
      bt[i][j] = ad.b.at(j, i);
    }
  const oracle::Mat low = oracle::matmul(oracle::matmul(oracle::to_mat(x), at), bt);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(y.at(r, c), base[r][c] + 2.0 * low[r][c], 1e-10);
}

TEST(Lora, DropoutOnlyWithRng) {
  RngState rng(15);
  const Tensor w = random_normal({8, 8}, 1.0, rng);
  const Tensor x = random_normal({4, 8}, 1.0, rng);
  const LoraAdapter drop{random_normal({4, 8}, 1.0, rng), random_normal({8, 4}, 1.0, rng), 8.0, 0.5};
  LoraAdapter plain = drop;
  plain.dropout = 0.0;
  EXPECT_EQ(lora_apply(w, drop, x), lora_apply(w, plain, x));
  RngState r1(16), r2(16);
  const Tensor y1 = lora_apply(w, drop, x, &r1);
  EXPECT_EQ(y1, lora_apply(w, drop, x, &r2));
  EXPECT_FALSE(y1 == lora_apply(w, plain, x));
}

namespace {

struct Fixture {
  GeneratorConfig cfg = small_config();
  GeneratorParams p;
  Tensor traffic, a_mix;

  explicit Fixture(std::uint64_t seed) : p(dense_params(cfg, seed)) {
    RngState rng(seed + 100);
    traffic = random_normal({cfg.n_nodes, cfg.features}, 1.0, rng);
    a_mix = random_uniform({cfg.n_nodes, cfg.n_nodes}, 0.0, 1.0, rng);
  }
};

}  // namespace

TEST(Decode, StepIsDistribution) {
  const Fixture f(17);
  const TextGenerator gen(f.cfg, f.p, AblationFlags{}, f.traffic, f.a_mix);
  const auto probs = lm_step({kBos, 4, 5}, gen);
  ASSERT_EQ(probs.size(), f.cfg.vocab);
  EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-12);
  for (double q : probs) EXPECT_GT(q, 0.0);
  EXPECT_THROW(lm_step({}, gen), ParameterError);
}

TEST(Decode, CausalAndStepwiseConsistent) {
  const Fixture f(18);
  const GeneratorConfig& cfg = f.cfg;
  const TextGenerator gen(cfg, f.p, AblationFlags{}, f.traffic, f.a_mix);
  generator::ConditionCache cond;
  generator::condition_forward(cfg, f.p, AblationFlags{}, f.traffic.data(), f.a_mix.data(), nullptr, cond);
  const std::vector<TokenId> a{kBos, 4, 6, 8}, b{kBos, 4, 7, 5};
  std::vector<double> la(a.size() * cfg.vocab), lb(b.size() * cfg.vocab);
  generator::DecoderCache ca, cb;
  generator::decoder_forward(cfg, f.p, AblationFlags{}, cond, a.data(), a.size(), nullptr, la.data(), ca);
  generator::decoder_forward(cfg, f.p, AblationFlags{}, cond, b.data(), b.size(), nullptr, lb.data(), cb);
  // Positions before the first difference see identical logits.
  for (std::size_t j = 0; j < 2 * cfg.vocab; ++j) EXPECT_EQ(la[j], lb[j]);
  // Each full-sequence row equals a fresh step on the matching prefix.
  for (std::size_t l = 0; l < a.size(); ++l) {
    const std::vector<double> want =
        oracle::softmax(std::vector<double>(la.begin() + l * cfg.vocab, la.begin() + (l + 1) * cfg.vocab));
    const auto got = gen.step(std::vector<TokenId>(a.begin(), a.begin() + l + 1));
    for (std::size_t j = 0; j < cfg.vocab; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
  }
}

TEST(Decode, GreedyLayoutAndDeterminism) {
  for (std::uint64_t seed : {19u, 20u, 21u}) {
    const Fixture f(seed);
    const TextGenerator gen(f.cfg, f.p, AblationFlags{}, f.traffic, f.a_mix);
    for (std::size_t len : {2u, 3u, 7u}) {
      const TokenSequence s = greedy_decode(gen, len);
      EXPECT_EQ(s.size(), len);
      EXPECT_EQ(s.ids.front(), kBos);
      EXPECT_NE(std::find(s.ids.begin(), s.ids.end(), kEos), s.ids.end());
      EXPECT_NO_THROW(validate_sequence(s, f.cfg.vocab));
      EXPECT_EQ(s.ids, greedy_decode(gen, len).ids);
    }
  }
}

TEST(Decode, GreedyFollowsBias) {
  Fixture f(22);
  f.p.lm_b[static_cast<std::size_t>(kEos)] = 80.0;
  const TextGenerator stop(f.cfg, f.p, AblationFlags{}, f.traffic, f.a_mix);
  EXPECT_EQ(stop.greedy_decode(5).ids, (std::vector<TokenId>{kBos, kEos, kPad, kPad, kPad}));

  f.p.lm_b[static_cast<std::size_t>(kEos)] = 0.0;
  f.p.lm_b[6] = 80.0;
  f.p.lm_b[static_cast<std::size_t>(kPad)] = 200.0;  // never emitted
  const TextGenerator word(f.cfg, f.p, AblationFlags{}, f.traffic, f.a_mix);
  EXPECT_EQ(word.greedy_decode(5).ids, (std::vector<TokenId>{kBos, 6, 6, 6, kEos}));
}

TEST(Generator, GradientsMatchFiniteDifferences) {
  const std::vector<AblationFlags> flag_sets{
      AblationFlags{},
      AblationFlags{true, false, false, false, false},
      AblationFlags{true, true, false, false, false},
      AblationFlags{true, false, true, true, false},
      AblationFlags{true, true, true, false, true},
  };
  const std::vector<std::size_t> fixed{1, 3};
  const std::vector<TokenId> tokens{kBos, 4, 7, 5, kEos}, targets{4, 7, 5, kEos, kPad};
  for (const AblationFlags& flags : flag_sets) {
    Fixture f(23);
    const GeneratorConfig& cfg = f.cfg;
    auto loss = [&]() {
      generator::ConditionCache cond;
      generator::condition_forward(cfg, f.p, flags, f.traffic.data(), f.a_mix.data(), &fixed, cond);
      std::vector<double> logits(tokens.size() * cfg.vocab);
      generator::DecoderCache dc;
      generator::decoder_forward(cfg, f.p, flags, cond, tokens.data(), tokens.size(), nullptr, logits.data(), dc);
      return generator::token_cross_entropy(logits.data(), targets.data(), tokens.size(), cfg.vocab, nullptr, nullptr);
    };

    GeneratorParams g = GeneratorParams::zeros(cfg);
    Tensor dx = Tensor::zeros_like(f.traffic), da = Tensor::zeros_like(f.a_mix);
    generator::ConditionCache cond;
    generator::condition_forward(cfg, f.p, flags, f.traffic.data(), f.a_mix.data(), &fixed, cond);
    std::vector<double> logits(tokens.size() * cfg.vocab), dlogits(logits.size());
    generator::DecoderCache dc;
    generator::decoder_forward(cfg, f.p, flags, cond, tokens.data(), tokens.size(), nullptr, logits.data(), dc);
    generator::token_cross_entropy(logits.data(), targets.data(), tokens.size(), cfg.vocab, dlogits.data(), nullptr);
    std::vector<double> dkv(cond.kv.size(), 0.0), dctx(cfg.dim, 0.0);
    generator::decoder_backward(cfg, f.p, flags, cond, dc, dlogits.data(), dkv.data(), dctx.data(), g);
    generator::condition_backward(cfg, f.p, flags, cond, dkv.data(), dctx.data(), da.data(), dx.data(), g);

    ParamList pl, gl;
    f.p.collect(pl, "g");
    g.collect(gl, "g");
    pl.push_back({"traffic", &f.traffic});
    gl.push_back({"traffic", &dx});
    pl.push_back({"a_mix", &f.a_mix});
    gl.push_back({"a_mix", &da});
    const GradCheckReport rep = grad_check(loss, pl, gl);
    EXPECT_TRUE(rep.passed) << describe(flags) << "\n" << rep.summary();

    GradCheckOptions bad;
    bad.corrupt_factor = 1.01;
    EXPECT_FALSE(grad_check(loss, pl, gl, bad).passed) << describe(flags);
  }
}
