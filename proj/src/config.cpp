#include "ctl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctl/error.hpp"

namespace ctl {

using nlohmann::json;

namespace {

json model_json(const ModelConfig& m) {
  return json{{"n_nodes", m.n_nodes},
              {"channels", m.channels},
              {"window", m.window},
              {"patch", m.patch},
              {"dim", m.dim},
              {"heads", m.heads},
              {"blocks", m.blocks},
              {"text_length", m.text_length},
              {"vocab", m.vocab},
              {"top_k", m.top_k},
              {"node_embed_dim", m.node_embed_dim},
              {"detector_hidden", m.detector_hidden},
              {"decoder_layers", m.decoder_layers},
              {"lora_rank", m.lora_rank},
              {"lora_alpha", m.lora_alpha},
              {"lora_dropout", m.lora_dropout},
              {"memory_slots", m.memory_slots},
              {"eta", m.eta},
              {"teacher_forcing", m.teacher_forcing},
              {"use_text", m.flags.use_text},
              {"use_gcn", m.flags.use_gcn},
              {"use_importance", m.flags.use_importance},
              {"use_xattn", m.flags.use_xattn},
              {"use_memory", m.flags.use_memory}};
}

json train_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"batch", t.batch},
              {"epochs", t.epochs},
              {"warmup_epochs", t.warmup_epochs},
              {"lambda_text", t.lambda_text},
              {"seed", t.seed},
              {"freeze_decoder_base", t.freeze_decoder_base},
              {"max_steps", t.max_steps}};
}

template <class T>
void take(const json& obj, const std::string& section, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + section + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, const json& known, const std::string& section) {
  if (!obj.is_object()) throw ConfigError("config: " + section + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("config: unknown key " + section + "." + it.key());
  }
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  // n_nodes and vocab come from the data; check everything else now.
  ModelConfig probe = model;
  probe.n_nodes = std::max<std::size_t>(probe.n_nodes, 1);
  probe.vocab = std::max<std::size_t>(probe.vocab, kNumSpecials + 1);
  probe.validate();
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("config: split_ratio must be in (0,1)");
}

std::string config_to_json(const RunConfig& cfg, int indent) {
  json j{{"model", model_json(cfg.model)},
         {"train", train_json(cfg.train)},
         {"split_ratio", cfg.split_ratio},
         {"eval_ground_truth_traffic", cfg.eval_ground_truth_traffic}};
  return j.dump(indent);
}

RunConfig config_from_json(std::string_view text, RunConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  reject_unknown(j, json{{"model", 0}, {"train", 0}, {"split_ratio", 0}, {"eval_ground_truth_traffic", 0}}, "config");
  take(j, "config", "split_ratio", cfg.split_ratio);
  take(j, "config", "eval_ground_truth_traffic", cfg.eval_ground_truth_traffic);
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, model_json(cfg.model), "model");
    ModelConfig& mc = cfg.model;
    take(m, "model", "n_nodes", mc.n_nodes);
    take(m, "model", "channels", mc.channels);
    take(m, "model", "window", mc.window);
    take(m, "model", "patch", mc.patch);
    take(m, "model", "dim", mc.dim);
    take(m, "model", "heads", mc.heads);
    take(m, "model", "blocks", mc.blocks);
    take(m, "model", "text_length", mc.text_length);
    take(m, "model", "vocab", mc.vocab);
    take(m, "model", "top_k", mc.top_k);
    take(m, "model", "node_embed_dim", mc.node_embed_dim);
    take(m, "model", "detector_hidden", mc.detector_hidden);
    take(m, "model", "decoder_layers", mc.decoder_layers);
    take(m, "model", "lora_rank", mc.lora_rank);
    take(m, "model", "lora_alpha", mc.lora_alpha);
    take(m, "model", "lora_dropout", mc.lora_dropout);
    take(m, "model", "memory_slots", mc.memory_slots);
    take(m, "model", "eta", mc.eta);
    take(m, "model", "teacher_forcing", mc.teacher_forcing);
    take(m, "model", "use_text", mc.flags.use_text);
    take(m, "model", "use_gcn", mc.flags.use_gcn);
    take(m, "model", "use_importance", mc.flags.use_importance);
    take(m, "model", "use_xattn", mc.flags.use_xattn);
    take(m, "model", "use_memory", mc.flags.use_memory);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, train_json(cfg.train), "train");
    take(t, "train", "lr", cfg.train.lr);
    take(t, "train", "batch", cfg.train.batch);
    take(t, "train", "epochs", cfg.train.epochs);
    take(t, "train", "warmup_epochs", cfg.train.warmup_epochs);
    take(t, "train", "lambda_text", cfg.train.lambda_text);
    take(t, "train", "seed", cfg.train.seed);
    take(t, "train", "freeze_decoder_base", cfg.train.freeze_decoder_base);
    take(t, "train", "max_steps", cfg.train.max_steps);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::move(base));
}

}  // namespace ctl
