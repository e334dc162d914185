// Acceptance run: one PASS/FAIL line per criterion, then a summary.
//
// Exit status is 0 once every criterion has been evaluated, whatever the
// outcome, so ctest tracks that the run completes. --strict turns any FAIL
// into exit 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ctl/checkpoint.hpp"
#include "ctl/fusion.hpp"
#include "ctl/generator.hpp"
#include "ctl/metrics.hpp"
#include "ctl/pipeline.hpp"
#include "ctl/predictor.hpp"
#include "ctl/verify.hpp"
#include "oracles.hpp"

using namespace ctl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

void report(int id, const char* title, const Outcome& o, std::vector<bool>& all) {
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  all.push_back(o.pass);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1 ----

Outcome gradients() {
  const auto t0 = Clock::now();
  VerifyOptions opts;
  opts.seeds = {0, 1, 2};
  const auto checks = gradient_suite(opts);
  const double secs = seconds_since(t0);
  Outcome o;
  std::size_t failed = 0;
  for (const auto& c : checks) {
    if (!c.passed) {
      ++failed;
      std::printf("  gradient check failed: %s: %s\n", c.name.c_str(), c.detail.c_str());
    }
  }
  o.pass = failed == 0 && secs < 120.0;
  o.detail = fmt("%zu probes over 3 seeds, %zu failed, %.1f s (limit 120 s)", checks.size(), failed, secs);
  return o;
}

// ---- 2 ----

Outcome metric_oracles() {
  using oracle::split;
  RngState rng(2024);
  double worst = 0.0;
  std::size_t lcs_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const oracle::Words a = oracle::random_words(rng), b = oracle::random_words(rng);
    worst = std::max(worst, std::abs(bleu4(a, b) - oracle::bleu4(a, b)));
    worst = std::max(worst, std::abs(meteor(a, b) - oracle::meteor(a, b)));
    worst = std::max(worst, std::abs(rouge_l(a, b) - oracle::rouge_l(a, b)));
    lcs_mismatch += lcs_length(a, b) != oracle::lcs(a, b);
  }
  const double b = bleu4(split("a b c d e"), split("a b c d f"));
  const double r = rouge_l(split("a c d"), split("a b c d"));
  const double m = meteor(split("a b c"), split("a b d"));
  const bool examples = std::abs(b - oracle::bleu4(split("a b c d e"), split("a b c d f"))) < 1e-9 &&
                        std::abs(b - 66.87) < 5e-3 && std::abs(r - 6.0 / 7.0) < 1e-9 && std::abs(m - 0.625) < 1e-9;
  Outcome o;
  o.pass = worst < 1e-9 && lcs_mismatch == 0 && examples;
  o.detail = fmt("100 random pairs, max |diff| %.2e, lcs mismatches %zu; BLEU %.4f, ROUGE-L %.6f, METEOR %.6f", worst,
                 lcs_mismatch, b, r, m);
  return o;
}

// ---- 3 ----

Outcome attention_paths() {
  RngState rng(7);
  double align_err = 0.0, mhsa_err = 0.0, xattn_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t s = 5, l = 7, d = 8;
    const Tensor h = random_normal({1, s, d}, 1.0, rng), t = random_normal({1, l, d}, 1.0, rng);
    const AlignedContext ctx = sparse_align(h, t, l);
    const auto kv = oracle::to_mat(t.data(), l, d);
    align_err = std::max(align_err,
                         oracle::max_abs_diff(oracle::attention(oracle::to_mat(h.data(), s, d), kv, kv, 1),
                                              ctx.c_text.data()));

    const nn::MhaWeights w{random_normal({d, d}, 0.5, rng), random_normal({d, d}, 0.5, rng),
                           random_normal({d, d}, 0.5, rng), random_normal({d, d}, 0.5, rng)};
    const Tensor x = random_normal({1, 6, d}, 1.0, rng);
    const auto X = oracle::to_mat(x.data(), 6, d);
    const auto ref = oracle::matmul(oracle::attention(oracle::matmul(X, oracle::to_mat(w.wq)),
                                                      oracle::matmul(X, oracle::to_mat(w.wk)),
                                                      oracle::matmul(X, oracle::to_mat(w.wv)), 2),
                                    oracle::to_mat(w.wo));
    mhsa_err = std::max(mhsa_err, oracle::max_abs_diff(ref, mhsa(x, w, 2).data()));

    GeneratorConfig gc;
    gc.n_nodes = 10;
    gc.features = 4;
    gc.dim = d;
    gc.heads = 2;
    gc.lora_rank = 4;
    GeneratorParams gp = GeneratorParams::init(gc, rng);
    gp.gate_b = random_normal({d}, 0.5, rng);
    const std::size_t n = gc.n_nodes, L = 4;
    const Tensor traffic = random_normal({1, 1, n, gc.features}, 1.0, rng);
    const Tensor hq = random_normal({1, 1, L, d}, 1.0, rng), feats = random_normal({1, 1, n, d}, 1.0, rng);
    const ImportanceScores imp = road_importance(traffic, gc, gp);
    const Tensor out = road_cross_attention(hq, feats, imp, gc, gp);
    oracle::Mat kvn = oracle::to_mat(feats.data(), n, d);
    for (std::size_t j = 0; j < n; ++j)
      for (double& v : kvn[j]) v *= imp.scores[j];
    const auto& sel = imp.selected[0];
    auto keep = [&](std::size_t, std::size_t j) { return std::find(sel.begin(), sel.end(), j) != sel.end(); };
    const auto Q = oracle::to_mat(hq.data(), L, d);
    const auto mod = oracle::matmul(oracle::attention(oracle::matmul(Q, oracle::to_mat(gp.xattn.wq)),
                                                      oracle::matmul(kvn, oracle::to_mat(gp.xattn.wk)),
                                                      oracle::matmul(kvn, oracle::to_mat(gp.xattn.wv)), 2, keep),
                                    oracle::to_mat(gp.xattn.wo));
    oracle::Mat want = Q;
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        double g = gp.gate_b[j];
        for (std::size_t i = 0; i < d; ++i) g += Q[r][i] * gp.gate_w.at(i, j) + mod[r][i] * gp.gate_w.at(d + i, j);
        want[r][j] += mod[r][j] / (1.0 + std::exp(-g));
      }
    xattn_err = std::max(xattn_err, oracle::max_abs_diff(want, out.data()));
  }
  Outcome o;
  o.pass = align_err < 1e-12 && mhsa_err < 1e-12 && xattn_err < 1e-12;
  o.detail = fmt("max |diff| sparse_align %.2e, mhsa %.2e, road_cross_attention %.2e (limit 1e-12)", align_err,
                 mhsa_err, xattn_err);
  return o;
}

// ---- 4 ----

Outcome invariants() {
  RngState rng(11);
  double row_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const Tensor a = adaptive_adjacency(random_normal({n, 1 + rng.below(8)}, 2.0, rng));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
  }

  bool film_exact = true;
  {
    const std::size_t d = 6;
    FusionParams p = FusionParams::init(d, 3, 4, rng);
    const Tensor h = random_normal({2, 4, 3, d}, 1.0, rng);
    const AlignedContext zero{Tensor({2, 4, d}), Tensor({2, 4, 5})};
    const Tensor y = film_modulate(h, zero, p);
    for (std::size_t i = 0; i < h.size(); ++i) film_exact = film_exact && y[i] == 0.5 * h[i];
  }

  std::size_t bad_counts = 0;
  for (std::size_t n = 1; n <= 50; ++n) {
    GeneratorConfig gc;
    gc.n_nodes = n;
    gc.features = 3;
    gc.dim = 8;
    gc.lora_rank = 4;
    const GeneratorParams gp = GeneratorParams::init(gc, rng);
    const ImportanceScores imp = road_importance(random_normal({1, 2, n, 3}, 1.0, rng), gc, gp);
    const std::size_t want = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(n) - 1e-12));
    for (const auto& sel : imp.selected) bad_counts += sel.size() != std::max<std::size_t>(want, 1);
  }

  bool lora_bitwise = true;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = random_normal({12, 9}, 1.0, rng), x = random_normal({5, 12}, 1.0, rng);
    const LoraAdapter ad{random_normal({4, 12}, 1.0, rng), Tensor({9, 4}), 24.0, 0.0};
    Tensor base({5, 9});
    nn::linear_forward(x.data(), 5, w, nullptr, base.data());
    lora_bitwise = lora_bitwise && lora_apply(w, ad, x) == base;
  }

  std::size_t causal_breaks = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GeneratorConfig gc;
    gc.n_nodes = 5;
    gc.features = 3;
    gc.dim = 8;
    gc.vocab = 12;
    gc.lora_rank = 4;
    RngState r(seed);
    GeneratorParams gp = GeneratorParams::init(gc, r);
    for (auto& l : gp.layers) l.bq = random_normal(l.bq.shape(), 0.5, r);
    const Tensor traffic = random_normal({5, 3}, 1.0, r), amix = random_uniform({5, 5}, 0.0, 0.4, r);
    generator::ConditionCache cond;
    generator::condition_forward(gc, gp, AblationFlags{}, traffic.data(), amix.data(), nullptr, cond);
    std::vector<TokenId> a{kBos}, b{kBos};
    for (int i = 0; i < 7; ++i) {
      const auto tok = static_cast<TokenId>(4 + r.below(8));
      a.push_back(tok);
      b.push_back(tok);
    }
    const std::size_t cut = 1 + r.below(6);
    for (std::size_t i = cut; i < b.size(); ++i) b[i] = static_cast<TokenId>(4 + (b[i] - 4 + 1 + r.below(7)) % 8);
    std::vector<double> la(a.size() * gc.vocab), lb(la.size());
    generator::DecoderCache ca, cb;
    generator::decoder_forward(gc, gp, AblationFlags{}, cond, a.data(), a.size(), nullptr, la.data(), ca);
    generator::decoder_forward(gc, gp, AblationFlags{}, cond, b.data(), b.size(), nullptr, lb.data(), cb);
    for (std::size_t i = 0; i < cut * gc.vocab; ++i) causal_breaks += la[i] != lb[i];
  }

  Outcome o;
  o.pass = row_err < 1e-9 && film_exact && bad_counts == 0 && lora_bitwise && causal_breaks == 0;
  o.detail = fmt("adjacency row-sum err %.1e; FiLM zero-context exact %s; selection count errors %zu (N=1..50); "
                 "LoRA zero-B bitwise %s; causality breaks %zu",
                 row_err, film_exact ? "yes" : "no", bad_counts, lora_bitwise ? "yes" : "no", causal_breaks);
  return o;
}

// ---- 5 ----

Outcome overfit() {
  const auto t0 = Clock::now();
  SyntheticConfig sc;
  sc.n_nodes = 8;
  sc.n_steps = 400;
  sc.seed = 1;
  const PreparedData data = prepare_data(generate_synthetic(sc).data, 12, 16, 0.8);
  std::vector<Sample> eight;
  for (std::size_t i = 0; i < 8; ++i) eight.push_back(data.split.train[i * 30]);
  const RunConfig run;
  const ModelConfig m = model_for_data(run, data);
  ModelParams p = ModelParams::init(m, 0);
  TrainConfig tc;
  tc.batch = 8;  // full batch: one step per epoch
  tc.epochs = 500;
  tc.warmup_epochs = 1;
  const TrainResult res = train(m, p, data.adjacency_norm, eight, tc);
  const BatchLoss ev = evaluate_loss(m, p, data.adjacency_norm, eight, tc.lambda_text);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ev.total < 0.05 && res.steps <= 500 && secs < 300.0;
  o.detail = fmt("8 samples, N=8, t=12: joint loss %.4f (mse %.4f, ce %.4f) after %zu steps, %.1f s (limits 0.05, "
                 "500 steps, 300 s)",
                 ev.total, ev.mse, ev.ce, res.steps, secs);
  return o;
}

// ---- 6, 7 ----

struct SeedRun {
  std::vector<AblationResult> rows;  // none, +gcn, +importance, +xattn, +memory, no_text
  double gt_bleu_full = 0.0, gt_bleu_none = 0.0;
  double text_pair_seconds = 0.0;  // training + evaluation of full and no_text
};

RunConfig ablation_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.train.epochs = 3;
  cfg.train.warmup_epochs = 1;
  cfg.train.seed = seed;
  return cfg;
}

PreparedData ablation_data(std::uint64_t seed) {
  SyntheticConfig sc;
  sc.n_steps = 4320;
  sc.anomaly_rate = 0.3;
  sc.seed = seed;
  return prepare_data(generate_synthetic(sc).data, 12, 16, 0.8);
}

SeedRun run_seed(std::uint64_t seed) {
  const RunConfig cfg = ablation_config(seed);
  const PreparedData data = ablation_data(seed);
  SeedRun out;
  for (const AblationRow& row : default_ablation_grid()) {
    const auto t0 = Clock::now();
    RunConfig rc = cfg;
    rc.model.flags = row.flags;
    const TrainedModel tm = train_model(rc, data);
    const Evaluation ev = evaluate_model(tm.checkpoint.config, tm.checkpoint.params, data);
    out.rows.push_back({row.name, row.flags, ev.report, tm.trace});
    if (row.name == "+memory" || row.name == "no_text") out.text_pair_seconds += seconds_since(t0);
    if (row.name == "none" || row.name == "+memory") {
      RunConfig gt = tm.checkpoint.config;
      gt.eval_ground_truth_traffic = true;
      const double b = evaluate_model(gt, tm.checkpoint.params, data).report.bleu4;
      (row.name == "none" ? out.gt_bleu_none : out.gt_bleu_full) = b;
    }
  }
  return out;
}

const HorizonMetrics& whole_window(const MetricReport& r) {
  return *std::max_element(r.horizons.begin(), r.horizons.end(),
                           [](const HorizonMetrics& a, const HorizonMetrics& b) { return a.steps < b.steps; });
}

Outcome text_ablation(const std::vector<SeedRun>& runs) {
  std::vector<double> full, no_text, full5, no_text5;
  double secs = 0.0;
  for (const auto& r : runs) {
    secs += r.text_pair_seconds;
    full.push_back(whole_window(r.rows[4].report).mae);
    no_text.push_back(whole_window(r.rows[5].report).mae);
    full5.push_back(r.rows[4].report.horizons.front().mae);
    no_text5.push_back(r.rows[5].report.horizons.front().mae);
  }
  const double mf = median(full), mn = median(no_text);
  const double gain = (mn - mf) / mn;
  Outcome o;
  o.pass = mf <= mn && gain >= 0.01 && secs < 1800.0;
  o.detail = fmt("median whole-window MAE full %.4f vs no-text %.4f (%+.2f%%, need >= 1%%); T5 %.4f vs %.4f; "
                 "%zu seeds, %.0f s",
                 mf, mn, 100.0 * gain, median(full5), median(no_text5), runs.size(), secs);
  return o;
}

Outcome component_ablation(const std::vector<SeedRun>& runs) {
  const std::vector<std::string> order{"none", "+gcn", "+importance", "+xattn", "+memory"};
  std::printf("  %-12s %8s %8s %8s\n", "row", "BLEU-4", "ROUGE-L", "METEOR");
  bool ordered = true;
  std::vector<double> med_bleu;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> b, r, m;
    for (const auto& run : runs) {
      ordered = ordered && run.rows[i].name == order[i];
      b.push_back(run.rows[i].report.bleu4);
      r.push_back(run.rows[i].report.rouge_l);
      m.push_back(run.rows[i].report.meteor);
    }
    med_bleu.push_back(median(b));
    std::printf("  %-12s %8.2f %8.4f %8.4f\n", order[i].c_str(), median(b), median(r), median(m));
  }
  std::vector<double> gt_full, gt_none;
  for (const auto& run : runs) {
    gt_full.push_back(run.gt_bleu_full);
    gt_none.push_back(run.gt_bleu_none);
  }
  const double gap = med_bleu[4] - med_bleu[0];
  Outcome o;
  o.pass = ordered && gap >= 1.0;
  o.detail = fmt("median BLEU-4 full %.2f vs none %.2f (gap %+.2f, need >= 1); table order %s; "
                 "with ground-truth traffic conditioning: %.2f vs %.2f",
                 med_bleu[4], med_bleu[0], gap, ordered ? "ok" : "wrong", median(gt_full), median(gt_none));
  return o;
}

// ---- 8 ----

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "ctl_acceptance_det";
  fs::remove_all(root);
  SyntheticConfig sc;
  sc.n_steps = 400;
  sc.seed = 5;
  const Dataset ds = generate_synthetic(sc).data;
  save_dataset(ds, root / "data");
  const Dataset back = load_dataset(root / "data");
  const bool data_exact = back.series.speeds == ds.series.speeds && back.graph.adjacency == ds.graph.adjacency &&
                          back.graph.node_names == ds.graph.node_names && back.events == ds.events;

  const PreparedData pd = prepare_data(ds, 12, 16, 0.8);
  RunConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.seed = 3;
  bool same_ckpt = true, same_forecast = true, same_text = true;
  std::vector<Evaluation> evals;
  for (int rep = 0; rep < 2; ++rep) {
    const TrainedModel tm = train_model(cfg, pd);
    save_checkpoint(tm.checkpoint, root / ("ck" + std::to_string(rep)));
    evals.push_back(evaluate_model(tm.checkpoint.config, tm.checkpoint.params, pd));
    write_forecast_csv(pd, evals.back(), root / ("f" + std::to_string(rep) + ".csv"));
    write_reports_jsonl(pd, evals.back(), root / ("r" + std::to_string(rep) + ".jsonl"));
  }
  for (const char* f : {"manifest.json", "params.bin", "vocab.json"}) {
    same_ckpt = same_ckpt && slurp(root / "ck0" / f) == slurp(root / "ck1" / f);
  }
  for (std::size_t i = 0; i < evals[0].forecasts.size(); ++i) {
    same_forecast = same_forecast && evals[0].forecasts[i] == evals[1].forecasts[i];
  }
  same_forecast = same_forecast && slurp(root / "f0.csv") == slurp(root / "f1.csv");
  same_text = evals[0].generated == evals[1].generated && slurp(root / "r0.jsonl") == slurp(root / "r1.jsonl");

  const Checkpoint loaded = load_checkpoint(root / "ck0");
  save_checkpoint(loaded, root / "ck_resaved");
  bool ckpt_roundtrip = slurp(root / "ck0" / "params.bin") == slurp(root / "ck_resaved" / "params.bin");
  const Evaluation ev_loaded = evaluate_model(loaded.config, loaded.params, pd);
  for (std::size_t i = 0; i < ev_loaded.forecasts.size(); ++i) {
    ckpt_roundtrip = ckpt_roundtrip && ev_loaded.forecasts[i] == evals[0].forecasts[i];
  }
  fs::remove_all(root);
  Outcome o;
  o.pass = data_exact && same_ckpt && same_forecast && same_text && ckpt_roundtrip;
  o.detail = fmt("checkpoint bytes identical %s; forecasts %s; reports %s; checkpoint roundtrip %s; dataset "
                 "roundtrip %s",
                 same_ckpt ? "yes" : "no", same_forecast ? "yes" : "no", same_text ? "yes" : "no",
                 ckpt_roundtrip ? "yes" : "no", data_exact ? "yes" : "no");
  return o;
}

// ---- 9 ----

Outcome report_checks(const std::vector<SeedRun>& runs, const char* cli) {
  std::size_t reports = 0, rmse_violations = 0, schema_errors = 0;
  for (const auto& run : runs) {
    for (const auto& row : run.rows) {
      ++reports;
      for (const auto& h : row.report.horizons) rmse_violations += !(h.rmse >= h.mae);
      const auto errs = validate_report_json(report_to_json(row.report));
      schema_errors += errs.size();
      for (const auto& e : errs) std::printf("  schema: %s\n", e.c_str());
    }
  }
  int verify_status = -1;
  if (cli) {
    const std::string cmd = std::string(cli) + " verify >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    verify_status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  Outcome o;
  o.pass = reports > 0 && rmse_violations == 0 && schema_errors == 0 && verify_status == 0;
  o.detail = fmt("%zu reports, rmse < mae in %zu horizons, %zu schema errors; `ctl verify` exit %d", reports,
                 rmse_violations, schema_errors, verify_status);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::size_t n_seeds = 5;
  const char* cli = nullptr;
#ifdef CTL_BIN
  cli = CTL_BIN;
#endif
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--strict")) {
      strict = true;
    } else if (!std::strcmp(argv[i], "--seeds") && i + 1 < argc) {
      n_seeds = std::strtoul(argv[++i], nullptr, 10);
    } else if (!std::strcmp(argv[i], "--cli") && i + 1 < argc) {
      cli = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--strict] [--seeds N] [--cli path/to/ctl]\n", argv[0]);
      return 2;
    }
  }

  const auto t0 = Clock::now();
  std::vector<bool> results;
  report(1, "gradient correctness", gradients(), results);
  report(2, "metric oracle equivalence", metric_oracles(), results);
  report(3, "attention equivalence", attention_paths(), results);
  report(4, "structural invariants", invariants(), results);
  report(5, "overfit sanity", overfit(), results);

  std::vector<SeedRun> runs;
  for (std::uint64_t s = 0; s < n_seeds; ++s) {
    const auto ts = Clock::now();
    runs.push_back(run_seed(s));
    const auto& rows = runs.back().rows;
    std::printf("  seed %llu: full MAE %.4f, no-text %.4f; BLEU full %.2f, none %.2f (%.0f s)\n",
                static_cast<unsigned long long>(s), whole_window(rows[4].report).mae,
                whole_window(rows[5].report).mae, rows[4].report.bleu4, rows[0].report.bleu4, seconds_since(ts));
    std::fflush(stdout);
  }
  report(6, "text ablation direction", text_ablation(runs), results);
  report(7, "component ablation direction", component_ablation(runs), results);
  report(8, "determinism and persistence", determinism(), results);
  report(9, "report validity", report_checks(runs, cli), results);

  const auto passed = static_cast<std::size_t>(std::count(results.begin(), results.end(), true));
  std::printf("%zu/%zu criteria passed in %.0f s\n", passed, results.size(), seconds_since(t0));
  return strict && passed != results.size() ? 1 : 0;
}
