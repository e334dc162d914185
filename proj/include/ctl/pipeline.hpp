#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctl/checkpoint.hpp"
#include "ctl/config.hpp"
#include "ctl/dataset.hpp"
#include "ctl/metrics.hpp"
#include "ctl/model.hpp"

namespace ctl {

// Every word the event templates can produce for these node names.
Vocab closed_vocab(const std::vector<std::string>& node_names);

struct PreparedData {
  Dataset dataset;
  Vocab vocab;
  NormStats stats;     // fitted on training rows only
  Split split;         // normalized samples
  Tensor adjacency_norm;
};

// windowize -> split -> fit stats on rows before the split boundary ->
// normalize every sample. When `vocab` / `stats` are given they are reused
// (evaluation against a checkpoint).
PreparedData prepare_data(Dataset dataset, std::size_t window, std::size_t text_length, double split_ratio,
                          const Vocab* vocab = nullptr, const NormStats* stats = nullptr);

// Copy of cfg.model with n_nodes, channels and vocab taken from the data.
ModelConfig model_for_data(const RunConfig& cfg, const PreparedData& data);

struct Evaluation {
  MetricReport report;
  std::vector<Tensor> forecasts;  // km/h, per test sample [t,N,C]
  std::vector<Tensor> targets;
  std::vector<Tokens> generated;
  std::vector<Tokens> references;
  std::vector<std::vector<std::size_t>> selected;
};

// Test split evaluation. `oracle` feeds the targets back as forecasts and the
// references as generated text.
Evaluation evaluate_model(const RunConfig& cfg, const ModelParams& params, const PreparedData& data,
                          bool oracle = false);

struct TrainedModel {
  Checkpoint checkpoint;
  std::vector<EpochStats> trace;
};

// Initializes with cfg.train.seed, trains on the training split.
TrainedModel train_model(const RunConfig& cfg, const PreparedData& data, const EpochCallback& on_epoch = {});

struct AblationResult {
  std::string name;
  AblationFlags flags;
  MetricReport report;
  std::vector<EpochStats> trace;
};

// Trains and evaluates every row on the shared split.
std::vector<AblationResult> run_ablation(const RunConfig& cfg, const PreparedData& data,
                                         const std::vector<AblationRow>& rows);
// Component rows in table order, then the no-text row.
std::vector<AblationRow> default_ablation_grid();
// {"columns":[...],"rows":[{"name","flags":{...},"BLEU-4","ROUGE-L","METEOR","T5":{...}}]}
std::string ablation_to_json(const std::vector<AblationResult>& results);

// ---- output files ----
// anchor,step,<node columns>: one row per test sample and forecast step, km/h
void write_forecast_csv(const PreparedData& data, const Evaluation& eval, const std::filesystem::path& path);
// {"anchor":..,"text":"..","selected_nodes":[..]} per test sample
void write_reports_jsonl(const PreparedData& data, const Evaluation& eval, const std::filesystem::path& path);
// epoch,loss,mse,ce
void write_loss_csv(const std::vector<EpochStats>& trace, const std::filesystem::path& path);

}  // namespace ctl
