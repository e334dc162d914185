#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ctl/model.hpp"
#include "ctl/training.hpp"

namespace ctl {

// Everything a run needs besides the data. n_nodes and vocab in `model` are
// filled from the dataset at prepare time.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  double split_ratio = 0.8;
  // Generator input at evaluation: false uses the forecast, true the ground truth.
  bool eval_ground_truth_traffic = false;

  void validate() const;  // throws ConfigError
};

// Keys: "model", "train", "split_ratio", "eval_ground_truth_traffic".
// Unknown keys and wrong types raise ConfigError; missing keys keep defaults.
std::string config_to_json(const RunConfig& cfg, int indent = 2);
RunConfig config_from_json(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace ctl
