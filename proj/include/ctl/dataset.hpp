#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctl/tensor.hpp"
#include "ctl/tokenizer.hpp"

namespace ctl {

struct RoadGraph {
  std::size_t n_nodes = 0;
  std::vector<std::string> node_names;
  Tensor adjacency;  // [N,N] symmetric {0,1}, zero diagonal

  void validate() const;
};

struct TrafficSeries {
  Tensor speeds;  // [T,N,C] km/h
  int step_minutes = 4;

  std::size_t steps() const { return speeds.dim(0); }
  std::size_t nodes() const { return speeds.dim(1); }
  std::size_t channels() const { return speeds.dim(2); }
};

enum class EventKind { Accident, Closure, Construction, Congestion };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view s);  // throws ParameterError
// Anomaly length in steps for each kind. Kinds differ in duration so the
// event text tells a forecaster how long a depression will last.
std::size_t event_duration(EventKind kind);
std::string event_text(EventKind kind, std::string_view node_name);

struct Event {
  std::size_t time_index = 0;
  std::size_t node_index = 0;
  EventKind kind = EventKind::Accident;
  std::string text;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventLog {
  std::vector<Event> events;
  friend bool operator==(const EventLog&, const EventLog&) = default;
};

struct Dataset {
  RoadGraph graph;
  TrafficSeries series;
  EventLog events;
  std::uint64_t seed = 0;
};

struct Anomaly {
  std::size_t node = 0;
  std::size_t onset = 0;
  std::size_t duration = 0;
  EventKind kind = EventKind::Accident;
  double depth = 0.5;
};

struct SyntheticConfig {
  std::size_t n_nodes = 8;
  std::size_t n_steps = 720;
  double anomaly_rate = 0.3;  // probability that a block of `window` steps has an onset
  double anomaly_depth = 0.6;
  std::uint64_t seed = 0;
  std::size_t window = 12;
  int step_minutes = 4;
  double noise_std = 1.5;
  std::vector<Anomaly> scripted;  // injected in addition to the random ones
};

struct SyntheticDataset {
  Dataset data;
  Tensor baseline;  // [T,N,C] clean speeds before anomalies
  std::vector<Anomaly> anomalies;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

// Multiplies `factor` [T,N] by (1-depth) on the node over its interval and by
// (1-depth/2) on its graph neighbours one step later.
void apply_anomaly(Tensor& factor, const RoadGraph& graph, const Anomaly& anomaly);
std::vector<std::string> default_node_names(std::size_t n);

struct Sample {
  Tensor x_hist;    // [t,N,C]
  Tensor y_future;  // [t,N,C]
  TokenSequence text_hist;
  TokenSequence text_future;
  std::size_t anchor = 0;
  std::string hist_text;    // raw concatenated event texts
  std::string future_text;
};

// Stride-1 windows: anchors 0..T-2t. Throws ParameterError when T < 2t.
std::vector<Sample> windowize(const TrafficSeries& series, const EventLog& events, const Vocab& vocab,
                              std::size_t window, std::size_t text_length);

// Event texts with onset in [begin, end), joined by spaces.
std::string window_text(const EventLog& events, std::size_t begin, std::size_t end);

struct NormStats {
  Tensor mean;  // [N,C]
  Tensor std;   // [N,C]
};

inline constexpr double kNormEps = 1e-8;

// Per-node, per-channel moments over rows [0, row_end).
NormStats fit_norm_stats(const TrafficSeries& series, std::size_t row_end);
// Standardizes with `stats`, fitting on all rows when none are given.
std::pair<TrafficSeries, NormStats> z_normalize(const TrafficSeries& series,
                                                const std::optional<NormStats>& stats = std::nullopt);
TrafficSeries denormalize(const TrafficSeries& series, const NormStats& stats);
// Same maps on any tensor whose trailing axes are [N,C].
Tensor normalize_tensor(const Tensor& x, const NormStats& stats);
Tensor denormalize_tensor(const Tensor& x, const NormStats& stats);

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::size_t boundary = 0;  // first time row owned by the test split
  std::size_t train_candidates = 0;
};

// First floor(ratio*n) samples train, the rest test; train samples whose
// window reaches the first test anchor are dropped.
Split split_temporal(std::vector<Sample> samples, double ratio = 0.8);

// ---- files --------------------------------------------------------------

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_speeds_csv(const TrafficSeries& series, const std::vector<std::string>& node_names,
                      const std::filesystem::path& path);
TrafficSeries read_speeds_csv(const std::filesystem::path& path, std::vector<std::string>* node_names = nullptr);
void write_adjacency_json(const RoadGraph& graph, const std::filesystem::path& path);
RoadGraph read_adjacency_json(const std::filesystem::path& path);
void write_events_jsonl(const EventLog& log, const std::filesystem::path& path);
EventLog read_events_jsonl(const std::filesystem::path& path, std::size_t n_steps, std::size_t n_nodes);

}  // namespace ctl
