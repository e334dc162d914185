#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>

#include "ctl/error.hpp"
#include "ctl/grad_check.hpp"
#include "ctl/pipeline.hpp"
#include "ctl/training.hpp"

using namespace ctl;

TEST(JointLoss, ScalarProbe) {
  Tensor f({1}), y({1}), lp({2, 3});
  f[0] = 0.5;
  lp.at(0, 2) = -0.5;
  lp.at(1, 0) = -7.0;
  const std::vector<TokenId> targets{2, kPad};
  // MSE 0.25 + 2 * CE 0.5; the PAD row is ignored.
  EXPECT_DOUBLE_EQ(joint_loss(f, y, lp, targets, 2.0), 1.25);
  EXPECT_DOUBLE_EQ(joint_loss(f, y, lp, targets, 0.0), 0.25);
  EXPECT_EQ(joint_loss(y, y, lp, targets, 2.0), 1.0);
  Tensor sure({2, 3});
  EXPECT_EQ(joint_loss(y, y, sure, targets, 3.0), 0.0);
  EXPECT_THROW(joint_loss(f, Tensor({2}), lp, targets, 1.0), DimensionError);
}

namespace {

struct Quadratic {
  Tensor x{Tensor({1})}, g{Tensor({1})};
  ParamList p{{"x", &x}}, gl{{"x", &g}};
};

}  // namespace

TEST(Adam, ZeroGradientKeepsParameters) {
  Quadratic q;
  q.x[0] = 1.7;
  AdamState s = AdamState::for_params(q.p);
  for (int i = 0; i < 5; ++i) adam_step(q.p, q.gl, s, 0.1);
  EXPECT_EQ(q.x[0], 1.7);
}

TEST(Adam, FirstStepMovesByLr) {
  RngState rng(1);
  Tensor x = random_normal({50}, 1.0, rng), g = random_normal({50}, 3.0, rng);
  const Tensor x0 = x;
  ParamList p{{"x", &x}}, gl{{"g", &g}};
  AdamState s = AdamState::for_params(p);
  adam_step(p, gl, s, 0.01);
  // Bias correction makes m/c1 = g and sqrt(v/c2) = |g|.
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(x0[i] - x[i], 0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
    if (std::abs(g[i]) > 1e-3) EXPECT_NEAR(std::abs(x0[i] - x[i]), 0.01, 1e-6);
  }
}

TEST(Adam, MinimizesQuadratic) {
  Quadratic q;
  AdamState s = AdamState::for_params(q.p);
  std::size_t steps = 0;
  for (; steps < 2000 && std::abs(q.x[0] - 3.0) >= 0.01; ++steps) {
    q.g[0] = 2.0 * (q.x[0] - 3.0);
    adam_step(q.p, q.gl, s, 0.01);
  }
  EXPECT_LT(std::abs(q.x[0] - 3.0), 0.01);
  EXPECT_LT(steps, 2000u);
}

TEST(Schedule, EndpointsAndContinuity) {
  EXPECT_EQ(lr_schedule(0, 100, 10, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(5, 100, 10, 0.1), 0.05);
  EXPECT_DOUBLE_EQ(lr_schedule(10, 100, 10, 0.1), 0.1);
  EXPECT_NEAR(lr_schedule(100, 100, 10, 0.1), 0.0, 1e-12);
  EXPECT_NEAR(lr_schedule(55, 100, 10, 0.1), 0.05, 1e-12);
  // Continuous at the junction: the two sides differ by one warmup increment at most.
  const double left = lr_schedule(9999, 1000000, 10000, 1.0), right = lr_schedule(10001, 1000000, 10000, 1.0);
  EXPECT_NEAR(left, 1.0, 1e-4);
  EXPECT_NEAR(right, 1.0, 1e-4);
  double prev = 1.0;
  for (std::size_t s = 10; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 10, 1.0);
    EXPECT_LE(lr, prev + 1e-15);
    prev = lr;
  }
  EXPECT_THROW(lr_schedule(0, 10, 10, 1.0), ParameterError);
}

TEST(GradCheck, SquareAtThree) {
  Quadratic q;
  q.x[0] = 3.0;
  q.g[0] = 6.0;
  const GradCheckReport rep = grad_check([&] { return q.x[0] * q.x[0]; }, q.p, q.gl);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(q.x[0], 3.0);
}

TEST(GradCheck, LinearMapIsExact) {
  RngState rng(2);
  Tensor w = random_normal({4, 5}, 1.0, rng);
  const Tensor c = random_normal({4, 5}, 1.0, rng);
  ParamList p{{"w", &w}}, gl{{"w", const_cast<Tensor*>(&c)}};
  auto f = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += c[i] * w[i];
    return s;
  };
  const GradCheckReport rep = grad_check(f, p, gl);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-9);
  EXPECT_EQ(rep.checked, 20u);
}

TEST(GradCheck, CorruptedGradientFailsWithDiagnostics) {
  Quadratic q;
  q.x[0] = 3.0;
  q.g[0] = 6.0;
  GradCheckOptions bad;
  bad.corrupt_factor = 1.01;
  const GradCheckReport rep = grad_check([&] { return q.x[0] * q.x[0]; }, q.p, q.gl, bad);
  EXPECT_FALSE(rep.passed);
  ASSERT_EQ(rep.failures.size(), 1u);
  EXPECT_EQ(rep.failures[0].tensor, "x");
  EXPECT_NEAR(rep.failures[0].analytic, 6.06, 1e-12);
  EXPECT_NEAR(rep.failures[0].numeric, 6.0, 1e-6);
  EXPECT_NE(rep.summary().find("x"), std::string::npos);
}

namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  ModelConfig& m = cfg.model;
  m.window = 8;
  m.patch = 4;
  m.dim = 8;
  m.heads = 2;
  m.blocks = 1;
  m.text_length = 8;
  m.node_embed_dim = 4;
  m.detector_hidden = 6;
  m.decoder_layers = 1;
  m.lora_rank = 2;
  m.lora_alpha = 4.0;
  m.memory_slots = 4;
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;
  cfg.train.batch = 4;
  cfg.train.seed = 5;
  return cfg;
}

PreparedData tiny_data(std::uint64_t seed = 3) {
  SyntheticConfig s;
  s.n_nodes = 4;
  s.n_steps = 160;
  s.window = 8;
  s.seed = seed;
  return prepare_data(generate_synthetic(s).data, 8, 8, 0.8);
}

}  // namespace

TEST(Train, DeterministicAndTraced) {
  const RunConfig cfg = tiny_run();
  const PreparedData data = tiny_data();
  const TrainedModel a = train_model(cfg, data);
  const TrainedModel b = train_model(cfg, data);
  ASSERT_EQ(a.trace.size(), cfg.train.epochs);
  ModelParams pa = a.checkpoint.params, pb = b.checkpoint.params;
  const ParamList la = pa.collect(), lb = pb.collect();
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(*la[i].tensor, *lb[i].tensor) << la[i].name;
  for (std::size_t e = 0; e < a.trace.size(); ++e) EXPECT_EQ(a.trace[e].loss, b.trace[e].loss);

  RunConfig other = cfg;
  other.train.seed = 6;
  ModelParams pc = train_model(other, data).checkpoint.params;
  EXPECT_FALSE(*pc.collect()[0].tensor == *la[0].tensor);
}

TEST(Train, DivergenceIsReported) {
  RunConfig cfg = tiny_run();
  cfg.train.lambda_text = 1e308;
  const PreparedData data = tiny_data();
  try {
    train_model(cfg, data);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, EvaluationIgnoresDropout) {
  RunConfig cfg = tiny_run();
  cfg.model.lora_dropout = 0.5;
  const PreparedData data = tiny_data();
  const ModelConfig m = model_for_data(cfg, data);
  ModelParams p = ModelParams::init(m, 7);
  // Nonzero LoRA B so dropout would show if it leaked into evaluation.
  RngState rng(8);
  for (auto& l : p.generator.layers) {
    l.bq = random_normal(l.bq.shape(), 0.5, rng);
    l.bv = random_normal(l.bv.shape(), 0.5, rng);
  }
  const BatchLoss a = evaluate_loss(m, p, data.adjacency_norm, data.split.test, 0.5);
  const BatchLoss b = evaluate_loss(m, p, data.adjacency_norm, data.split.test, 0.5);
  EXPECT_EQ(a.total, b.total);

  std::vector<const Sample*> batch{&data.split.train[0]};
  RngState d1(1), d2(2);
  LossOptions o1, o2;
  o1.dropout_rng = &d1;
  o2.dropout_rng = &d2;
  const double t1 = batch_loss(m, p, data.adjacency_norm, batch, o1, nullptr).total;
  const double t2 = batch_loss(m, p, data.adjacency_norm, batch, o2, nullptr).total;
  EXPECT_NE(t1, t2);
}

TEST(Train, JointLossGradientWithFrozenMasks) {
  for (const AblationFlags flags : {AblationFlags{}, no_text_row().flags, component_rows()[0].flags}) {
    RunConfig cfg = tiny_run();
    cfg.model.flags = flags;
    cfg.model.lora_dropout = 0.0;
    const PreparedData data = tiny_data();
    const ModelConfig m = model_for_data(cfg, data);
    ModelParams p = ModelParams::init(m, 11);
    RngState rng(12);
    for (auto& l : p.generator.layers) {
      l.bq = random_normal(l.bq.shape(), 0.3, rng);
      l.bv = random_normal(l.bv.shape(), 0.3, rng);
    }
    std::vector<const Sample*> batch{&data.split.train[1], &data.split.train[7]};
    std::vector<SampleMasks> masks;
    LossOptions rec;
    rec.masks = &masks;
    ModelParams g = ModelParams::zeros(m);
    batch_loss(m, p, data.adjacency_norm, batch, rec, &g);
    LossOptions replay = rec;
    replay.masks_fixed = true;
    auto loss = [&] { return batch_loss(m, p, data.adjacency_norm, batch, replay, nullptr).total; };
    const GradCheckReport rep = grad_check(loss, p.collect(), g.collect());
    EXPECT_TRUE(rep.passed) << describe(flags) << "\n" << rep.summary();
  }
}

TEST(Ablation, GridOrderAndTable) {
  const auto grid = default_ablation_grid();
  ASSERT_EQ(grid.size(), 6u);
  const std::vector<std::string> names{"none", "+gcn", "+importance", "+xattn", "+memory", "no_text"};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(grid[i].name, names[i]);
  // Cumulative: each component row switches on exactly one more generation part.
  auto count = [](const AblationFlags& f) { return f.use_gcn + f.use_importance + f.use_xattn + f.use_memory; };
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(count(grid[i].flags), static_cast<int>(i));
  EXPECT_FALSE(grid[5].flags.use_text);

  RunConfig cfg = tiny_run();
  cfg.train.epochs = 2;
  const PreparedData data = tiny_data();
  const auto rows = std::vector<AblationRow>(grid.begin(), grid.begin() + 5);
  const auto results = run_ablation(cfg, data, rows);
  ASSERT_EQ(results.size(), 5u);
  const auto doc = nlohmann::json::parse(ablation_to_json(results));
  EXPECT_EQ(doc["columns"], nlohmann::json({"BLEU-4", "ROUGE-L", "METEOR"}));
  ASSERT_EQ(doc["rows"].size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& row = doc["rows"][i];
    EXPECT_EQ(row["name"], names[i]);
    EXPECT_EQ(row["flags"]["use_memory"].get<bool>(), grid[i].flags.use_memory);
    for (const char* col : {"BLEU-4", "ROUGE-L", "METEOR"}) EXPECT_TRUE(row[col].is_number());
    EXPECT_EQ(results[i].trace.size(), cfg.train.epochs);
    for (const auto& h : results[i].report.horizons) EXPECT_GE(h.rmse, h.mae);
  }
}
