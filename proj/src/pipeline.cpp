#include "ctl/pipeline.hpp"

#include <fstream>
#include <charconv>

#include <json.hpp>

#include "ctl/error.hpp"
#include "ctl/fusion.hpp"

namespace ctl {

using nlohmann::json;

Vocab closed_vocab(const std::vector<std::string>& node_names) {
  std::vector<std::string> corpus;
  for (EventKind kind : {EventKind::Accident, EventKind::Closure, EventKind::Construction, EventKind::Congestion}) {
    for (const auto& name : node_names) corpus.push_back(event_text(kind, name));
  }
  return build_vocab(corpus);
}

PreparedData prepare_data(Dataset dataset, std::size_t window, std::size_t text_length, double split_ratio,
                          const Vocab* vocab, const NormStats* stats) {
  dataset.graph.validate();
  PreparedData out;
  out.vocab = vocab ? *vocab : closed_vocab(dataset.graph.node_names);
  std::vector<Sample> samples =
      windowize(dataset.series, dataset.events, out.vocab, window, text_length);
  out.split = split_temporal(std::move(samples), split_ratio);
  if (out.split.train.empty()) throw ParameterError("prepare_data: no training samples after the split");
  out.stats = stats ? *stats : fit_norm_stats(dataset.series, out.split.boundary);
  for (auto* part : {&out.split.train, &out.split.test}) {
    for (Sample& s : *part) {
      s.x_hist = normalize_tensor(s.x_hist, out.stats);
      s.y_future = normalize_tensor(s.y_future, out.stats);
    }
  }
  out.adjacency_norm = normalized_adjacency(dataset.graph.adjacency);
  out.dataset = std::move(dataset);
  return out;
}

ModelConfig model_for_data(const RunConfig& cfg, const PreparedData& data) {
  ModelConfig m = cfg.model;
  m.n_nodes = data.dataset.graph.n_nodes;
  m.channels = data.dataset.series.channels();
  m.vocab = data.vocab.size();
  m.validate();
  return m;
}

namespace {

Tensor raw_future(const PreparedData& data, const Sample& s, std::size_t window) {
  const Tensor& speeds = data.dataset.series.speeds;
  const std::size_t row = speeds.dim(1) * speeds.dim(2);
  Tensor y({window, speeds.dim(1), speeds.dim(2)});
  const double* src = speeds.data() + (s.anchor + window) * row;
  std::copy(src, src + window * row, y.data());
  return y;
}

}  // namespace

Evaluation evaluate_model(const RunConfig& cfg, const ModelParams& params, const PreparedData& data, bool oracle) {
  const ModelConfig model = model_for_data(cfg, data);
  if (data.split.test.empty()) throw ParameterError("evaluate: empty test split");
  Evaluation ev;
  for (const Sample& s : data.split.test) {
    Tensor target = raw_future(data, s, model.window);
    Tokens ref = decode_words(s.text_future.ids, data.vocab);
    if (oracle) {
      ev.forecasts.push_back(target);
      ev.generated.push_back(ref);
      ev.selected.emplace_back();
    } else {
      Tensor y_hat = forecast_sample(model, params, data.adjacency_norm, s);
      const Tensor& traffic = cfg.eval_ground_truth_traffic ? s.y_future : y_hat;
      Description d = describe_sample(model, params, data.adjacency_norm, traffic);
      ev.forecasts.push_back(denormalize_tensor(y_hat, data.stats));
      ev.generated.push_back(decode_words(d.tokens.ids, data.vocab));
      ev.selected.push_back(std::move(d.selected));
    }
    ev.targets.push_back(std::move(target));
    ev.references.push_back(std::move(ref));
  }
  ev.report = evaluate_run(ev.forecasts, ev.targets, ev.generated, ev.references);
  return ev;
}

TrainedModel train_model(const RunConfig& cfg, const PreparedData& data, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainedModel out;
  out.checkpoint.config = cfg;
  out.checkpoint.config.model = model_for_data(cfg, data);
  const ModelConfig& model = out.checkpoint.config.model;
  out.checkpoint.params = ModelParams::init(model, cfg.train.seed);
  out.checkpoint.vocab = data.vocab;
  out.checkpoint.stats = data.stats;
  TrainResult r = train(model, out.checkpoint.params, data.adjacency_norm, data.split.train, cfg.train, on_epoch);
  out.trace = std::move(r.epochs);
  return out;
}

std::vector<AblationRow> default_ablation_grid() {
  std::vector<AblationRow> rows;
  for (const auto& r : component_rows()) rows.push_back(r);
  rows.push_back(no_text_row());
  return rows;
}

std::vector<AblationResult> run_ablation(const RunConfig& cfg, const PreparedData& data,
                                         const std::vector<AblationRow>& rows) {
  std::vector<AblationResult> results;
  for (const AblationRow& row : rows) {
    RunConfig rc = cfg;
    rc.model.flags = row.flags;
    TrainedModel tm = train_model(rc, data);
    Evaluation ev = evaluate_model(tm.checkpoint.config, tm.checkpoint.params, data);
    results.push_back(AblationResult{row.name, row.flags, std::move(ev.report), std::move(tm.trace)});
  }
  return results;
}

std::string ablation_to_json(const std::vector<AblationResult>& results) {
  json rows = json::array();
  for (const auto& r : results) {
    json pred = json::object();
    for (const auto& h : r.report.horizons) {
      pred["T" + std::to_string(h.horizon)] = {{"mae", h.mae}, {"rmse", h.rmse}, {"steps", h.steps}};
    }
    rows.push_back({{"name", r.name},
                    {"flags",
                     {{"use_text", r.flags.use_text},
                      {"use_gcn", r.flags.use_gcn},
                      {"use_importance", r.flags.use_importance},
                      {"use_xattn", r.flags.use_xattn},
                      {"use_memory", r.flags.use_memory}}},
                    {"BLEU-4", r.report.bleu4},
                    {"ROUGE-L", r.report.rouge_l},
                    {"METEOR", r.report.meteor},
                    {"pred", pred},
                    {"final_loss", r.trace.empty() ? 0.0 : r.trace.back().loss}});
  }
  json doc{{"columns", {"BLEU-4", "ROUGE-L", "METEOR"}}, {"rows", rows}};
  return doc.dump(2) + "\n";
}

void write_forecast_csv(const PreparedData& data, const Evaluation& eval, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParameterError("cannot write " + path.string());
  const auto& names = data.dataset.graph.node_names;
  const std::size_t channels = data.dataset.series.channels();
  out << "anchor,step";
  for (const auto& name : names) {
    for (std::size_t c = 0; c < channels; ++c) out << ',' << name << (channels > 1 ? ":" + std::to_string(c) : "");
  }
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < eval.forecasts.size(); ++i) {
    const Tensor& f = eval.forecasts[i];
    for (std::size_t t = 0; t < f.dim(0); ++t) {
      out << data.split.test[i].anchor << ',' << t + 1;
      for (std::size_t j = 0; j < f.dim(1) * f.dim(2); ++j) {
        auto res = std::to_chars(buf, buf + sizeof(buf), f[t * f.dim(1) * f.dim(2) + j]);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
      }
      out << '\n';
    }
  }
}

void write_reports_jsonl(const PreparedData& data, const Evaluation& eval, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParameterError("cannot write " + path.string());
  for (std::size_t i = 0; i < eval.generated.size(); ++i) {
    json line{{"anchor", data.split.test[i].anchor},
              {"text", join_words(eval.generated[i])},
              {"selected_nodes", eval.selected[i]}};
    out << line.dump() << '\n';
  }
}

void write_loss_csv(const std::vector<EpochStats>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParameterError("cannot write " + path.string());
  out << "epoch,loss,mse,ce\n";
  char buf[64];
  for (std::size_t e = 0; e < trace.size(); ++e) {
    out << e;
    for (double v : {trace[e].loss, trace[e].mse, trace[e].ce}) {
      auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

}  // namespace ctl
