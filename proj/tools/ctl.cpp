// ctl: data generation, training, forecasting, reports, evaluation,
// ablation and verification from the command line.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage/config error,
// 3 numerical divergence, 64 unknown command.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "ctl/checkpoint.hpp"
#include "ctl/config.hpp"
#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/pipeline.hpp"
#include "ctl/verify.hpp"

namespace fs = std::filesystem;
using namespace ctl;

namespace {

constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitUnknown = 64;

const std::set<std::string> kCommands{"gen-data", "train", "predict", "describe", "evaluate", "ablate", "verify"};

struct Overrides {
  std::string config;
  std::string ablate;
  std::size_t epochs = 0;
  double lr = 0.0;
  std::size_t batch = 0;
  double lambda = -1.0;
  long long seed = -1;
  std::size_t max_steps = 0;
  bool full_scale = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "config.json")->check(CLI::ExistingFile);
  cmd->add_option("--epochs", o.epochs, "override train.epochs");
  cmd->add_option("--lr", o.lr, "override train.lr");
  cmd->add_option("--batch", o.batch, "override train.batch");
  cmd->add_option("--lambda", o.lambda, "override train.lambda_text");
  cmd->add_option("--seed", o.seed, "override train.seed");
  cmd->add_option("--max-steps", o.max_steps, "stop after this many optimizer steps");
  cmd->add_flag("--full-scale", o.full_scale, "start from the full-scale schedule (lr 5e-5, 50 epochs, 5 warmup)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig base;
  if (o.full_scale) base.train = TrainConfig::full_scale();
  RunConfig cfg = o.config.empty() ? base : load_config(o.config, base);
  if (o.epochs) cfg.train.epochs = o.epochs;
  if (o.epochs && cfg.train.warmup_epochs >= o.epochs) cfg.train.warmup_epochs = o.epochs - 1;
  if (o.lr > 0.0) cfg.train.lr = o.lr;
  if (o.batch) cfg.train.batch = o.batch;
  if (o.lambda >= 0.0) cfg.train.lambda_text = o.lambda;
  if (o.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(o.seed);
  if (o.max_steps) cfg.train.max_steps = o.max_steps;
  if (!o.ablate.empty()) cfg.model.flags = parse_ablation(o.ablate);
  cfg.validate();
  return cfg;
}

Dataset require_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("data directory " + dir + " does not exist");
  return load_dataset(dir);
}

// Data prepared with the checkpoint's vocabulary and statistics; refuses data
// the checkpoint was not built for.
PreparedData prepare_for(const Checkpoint& ck, Dataset ds) {
  const ModelConfig& m = ck.config.model;
  if (ds.graph.n_nodes != m.n_nodes || ds.series.channels() != m.channels) {
    throw ConfigError("data has " + std::to_string(ds.graph.n_nodes) + " nodes x " +
                      std::to_string(ds.series.channels()) + " channels, checkpoint expects " +
                      std::to_string(m.n_nodes) + " x " + std::to_string(m.channels));
  }
  if (!(closed_vocab(ds.graph.node_names) == ck.vocab)) {
    throw ConfigError("data node names do not match the checkpoint vocabulary");
  }
  return prepare_data(std::move(ds), m.window, m.text_length, ck.config.split_ratio, &ck.vocab, &ck.stats);
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-conditioned traffic forecasting and report generation", "ctl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ctl 0.1");

  // gen-data
  SyntheticConfig syn;
  std::string out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--nodes", syn.n_nodes, "road segments")->capture_default_str();
  gen->add_option("--steps", syn.n_steps, "time steps")->capture_default_str();
  gen->add_option("--anomaly-rate", syn.anomaly_rate, "onset probability per 12-step block")->capture_default_str();
  gen->add_option("--depth", syn.anomaly_depth, "relative speed drop of an anomaly")->capture_default_str();
  gen->add_option("--seed", syn.seed)->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  Overrides ov;
  std::string data, ckpt;
  auto* train_cmd = app.add_subcommand("train", "train and write a checkpoint");
  train_cmd->add_option("--data", data)->required();
  train_cmd->add_option("--out", out, "checkpoint directory")->required();
  train_cmd->add_option("--ablate", ov.ablate, "no-text,no-gcn,no-importance,no-xattn,no-memory,none,full");
  add_overrides(train_cmd, ov);

  auto* predict = app.add_subcommand("predict", "forecast CSV for the test split");
  auto* describe_cmd = app.add_subcommand("describe", "generated reports (JSONL) for the test split");
  bool oracle = false;
  auto* evaluate = app.add_subcommand("evaluate", "metric report for the test split");
  for (auto* cmd : {predict, describe_cmd, evaluate}) {
    cmd->add_option("--data", data)->required();
    cmd->add_option("--out", out)->required();
  }
  predict->add_option("--ckpt", ckpt)->required();
  describe_cmd->add_option("--ckpt", ckpt)->required();
  evaluate->add_option("--ckpt", ckpt, "required unless --oracle");
  evaluate->add_flag("--oracle", oracle, "score the targets against themselves");

  auto* ablate = app.add_subcommand("ablate", "train and score every ablation row");
  ablate->add_option("--data", data)->required();
  ablate->add_option("--out", out, "table.json")->required();
  add_overrides(ablate, ov);

  double corrupt = 1.0;
  auto* verify = app.add_subcommand("verify", "gradient checks and reference comparisons");
  verify->add_option("--corrupt-factor", corrupt, "test hook: scale analytic gradients");

  if (argc > 1 && argv[1][0] != '-' && !kCommands.count(argv[1])) {
    std::cerr << "unknown command '" << argv[1] << "'\n\n" << app.help();
    return kExitUnknown;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      const SyntheticDataset s = generate_synthetic(syn);
      save_dataset(s.data, out);
      std::printf("wrote %s: %zu nodes, %zu steps, %zu anomalies\n", out.c_str(), s.data.graph.n_nodes,
                  s.data.series.steps(), s.data.events.events.size());
      return 0;
    }
    if (*train_cmd) {
      const RunConfig cfg = resolve(ov);
      const PreparedData pd = prepare_data(require_dataset(data), cfg.model.window, cfg.model.text_length,
                                           cfg.split_ratio);
      std::printf("training [%s] on %zu samples, %zu epochs\n", ctl::describe(cfg.model.flags).c_str(),
                  pd.split.train.size(), cfg.train.epochs);
      const TrainedModel tm = train_model(cfg, pd, [](std::size_t e, const EpochStats& s) {
        std::printf("epoch %zu  loss %.6f  mse %.6f  ce %.6f\n", e, s.loss, s.mse, s.ce);
        std::fflush(stdout);
      });
      save_checkpoint(tm.checkpoint, out);
      write_loss_csv(tm.trace, fs::path(out) / "loss.csv");
      std::printf("checkpoint written to %s\n", out.c_str());
      return 0;
    }
    if (*predict || *describe_cmd || (*evaluate && !oracle)) {
      if (ckpt.empty()) throw ConfigError("--ckpt is required");
      const Checkpoint ck = load_checkpoint(ckpt);
      const PreparedData pd = prepare_for(ck, require_dataset(data));
      const Evaluation ev = evaluate_model(ck.config, ck.params, pd);
      ensure_parent(out);
      if (*predict) {
        write_forecast_csv(pd, ev, out);
        std::printf("%zu forecasts written to %s\n", ev.forecasts.size(), out.c_str());
      } else if (*describe_cmd) {
        write_reports_jsonl(pd, ev, out);
        std::printf("%zu reports written to %s\n", ev.generated.size(), out.c_str());
      } else {
        write_file_atomic(out, report_to_json(ev.report) + "\n");
        fs::path csv = out;
        csv.replace_extension(".csv");
        write_horizon_csv(ev.report, csv);
        for (const auto& w : ev.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        for (const auto& h : ev.report.horizons) {
          std::printf("T%zu  mae %.4f  rmse %.4f\n", h.horizon, h.mae, h.rmse);
        }
        std::printf("BLEU-4 %.2f  METEOR %.4f  ROUGE-L %.4f\n", ev.report.bleu4, ev.report.meteor, ev.report.rouge_l);
      }
      return 0;
    }
    if (*evaluate) {
      RunConfig cfg;
      const PreparedData pd =
          prepare_data(require_dataset(data), cfg.model.window, cfg.model.text_length, cfg.split_ratio);
      const Evaluation ev = evaluate_model(cfg, ModelParams{}, pd, /*oracle=*/true);
      ensure_parent(out);
      write_file_atomic(out, report_to_json(ev.report) + "\n");
      fs::path csv = out;
      csv.replace_extension(".csv");
      write_horizon_csv(ev.report, csv);
      std::printf("oracle: T5 mae %.4f  BLEU-4 %.2f\n", ev.report.horizons.front().mae, ev.report.bleu4);
      return 0;
    }
    if (*ablate) {
      const RunConfig cfg = resolve(ov);
      const PreparedData pd = prepare_data(require_dataset(data), cfg.model.window, cfg.model.text_length,
                                           cfg.split_ratio);
      const auto results = run_ablation(cfg, pd, default_ablation_grid());
      ensure_parent(out);
      write_file_atomic(out, ablation_to_json(results));
      std::printf("%-12s %8s %8s %8s %8s\n", "row", "BLEU-4", "ROUGE-L", "METEOR", "T5 MAE");
      for (const auto& r : results) {
        std::printf("%-12s %8.2f %8.4f %8.4f %8.4f\n", r.name.c_str(), r.report.bleu4, r.report.rouge_l,
                    r.report.meteor, r.report.horizons.front().mae);
      }
      return 0;
    }
    if (*verify) {
      VerifyOptions vo;
      vo.corrupt_factor = corrupt;
      vo.log = [](const std::string& line) {
        std::puts(line.c_str());
        std::fflush(stdout);
      };
      std::printf("kernels: %s\n", std::string(kernels::name(kernels::active().backend)).c_str());
      const VerifyReport rep = run_verify(vo);
      const auto failed = rep.failures();
      std::printf("%zu checks, %zu failed, %.1f s\n", rep.checks.size(), failed.size(), rep.seconds);
      for (const auto& f : failed) std::fprintf(stderr, "FAILED %s\n", f.c_str());
      return failed.empty() ? 0 : kExitVerify;
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
