#include "ctl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "ctl/error.hpp"
#include "ctl/rng.hpp"

namespace ctl {

namespace {

constexpr std::array<std::string_view, 12> kTrees{"elm",   "oak",   "pine",   "maple",  "cedar", "birch",
                                                  "ash",   "willow", "cherry", "poplar", "spruce", "walnut"};
constexpr std::array<std::string_view, 4> kSuffixes{"road", "street", "avenue", "lane"};

RoadGraph make_ring_with_chords(std::size_t n, RngState& rng) {
  RoadGraph g;
  g.n_nodes = n;
  g.node_names = default_node_names(n);
  g.adjacency = Tensor({n, n});
  auto link = [&](std::size_t i, std::size_t j) {
    g.adjacency.at(i, j) = 1.0;
    g.adjacency.at(j, i) = 1.0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    if (i != j) link(i, j);
  }
  if (n >= 4) {
    const std::size_t chords = std::max<std::size_t>(1, n / 4);
    std::size_t added = 0;
    for (std::size_t attempt = 0; added < chords && attempt < 64 * chords; ++attempt) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      const auto j = static_cast<std::size_t>(rng.below(n));
      if (i == j || g.adjacency.at(i, j) != 0.0) continue;
      link(i, j);
      ++added;
    }
  }
  return g;
}

}  // namespace

void RoadGraph::validate() const {
  if (adjacency.rank() != 2 || adjacency.dim(0) != n_nodes || adjacency.dim(1) != n_nodes) {
    throw DimensionError("adjacency must be [N,N] with N=" + std::to_string(n_nodes));
  }
  if (node_names.size() != n_nodes) throw DimensionError("node name count does not match node count");
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if (adjacency.at(i, i) != 0.0) throw ParameterError("adjacency has a self-loop at node " + std::to_string(i));
    for (std::size_t j = 0; j < n_nodes; ++j) {
      const double a = adjacency.at(i, j);
      if ((a != 0.0 && a != 1.0) || a != adjacency.at(j, i)) {
        throw ParameterError("adjacency is not a symmetric 0/1 matrix at (" + std::to_string(i) + "," +
                             std::to_string(j) + ")");
      }
    }
  }
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Accident:
      return "accident";
    case EventKind::Closure:
      return "closure";
    case EventKind::Construction:
      return "construction";
    case EventKind::Congestion:
      return "congestion";
  }
  return "accident";
}

EventKind parse_event_kind(std::string_view s) {
  if (s == "accident") return EventKind::Accident;
  if (s == "closure") return EventKind::Closure;
  if (s == "construction") return EventKind::Construction;
  if (s == "congestion") return EventKind::Congestion;
  throw ParameterError("unknown event kind '" + std::string(s) + "'");
}

std::size_t event_duration(EventKind kind) {
  switch (kind) {
    case EventKind::Accident:
      return 6;
    case EventKind::Congestion:
      return 10;
    case EventKind::Closure:
      return 24;
    case EventKind::Construction:
      return 48;
  }
  return 6;
}

std::string event_text(EventKind kind, std::string_view node_name) {
  return std::string(to_string(kind)) + " on " + std::string(node_name);
}

std::vector<std::string> default_node_names(std::size_t n) {
  std::vector<std::string> names;
  names.reserve(n);
  const std::size_t grid = kTrees.size() * kSuffixes.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::string name = std::string(kTrees[i % kTrees.size()]) + " " +
                       std::string(kSuffixes[(i / kTrees.size()) % kSuffixes.size()]);
    if (i >= grid) name += " " + std::to_string(i / grid + 1);
    names.push_back(std::move(name));
  }
  return names;
}

void apply_anomaly(Tensor& factor, const RoadGraph& graph, const Anomaly& anomaly) {
  const std::size_t steps = factor.dim(0);
  const std::size_t end = std::min(steps, anomaly.onset + anomaly.duration);
  for (std::size_t t = anomaly.onset; t < end; ++t) factor.at(t, anomaly.node) *= 1.0 - anomaly.depth;
  const std::size_t nb_end = std::min(steps, anomaly.onset + anomaly.duration + 1);
  for (std::size_t j = 0; j < graph.n_nodes; ++j) {
    if (graph.adjacency.at(anomaly.node, j) == 0.0) continue;
    for (std::size_t t = anomaly.onset + 1; t < nb_end; ++t) factor.at(t, j) *= 1.0 - 0.5 * anomaly.depth;
  }
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_nodes < 2) throw ParameterError("generate_synthetic: n_nodes must be >= 2");
  if (cfg.window == 0 || cfg.n_steps < 2 * cfg.window) {
    throw ParameterError("generate_synthetic: n_steps must be >= 2*window");
  }
  if (!(cfg.anomaly_rate >= 0.0 && cfg.anomaly_rate <= 1.0)) {
    throw ParameterError("generate_synthetic: anomaly_rate must be in [0,1]");
  }
  if (!(cfg.anomaly_depth > 0.0 && cfg.anomaly_depth < 1.0)) {
    throw ParameterError("generate_synthetic: anomaly_depth must be in (0,1)");
  }
  if (cfg.step_minutes <= 0) throw ParameterError("generate_synthetic: step_minutes must be positive");

  const std::size_t n = cfg.n_nodes;
  const std::size_t steps = cfg.n_steps;
  RngState root(cfg.seed);
  RngState graph_rng = root.fork(1);
  RngState profile_rng = root.fork(2);
  RngState noise_rng = root.fork(3);
  RngState event_rng = root.fork(4);

  SyntheticDataset out;
  out.data.seed = cfg.seed;
  out.data.graph = make_ring_with_chords(n, graph_rng);

  const double period = 24.0 * 60.0 / static_cast<double>(cfg.step_minutes);
  std::vector<double> mean(n), amp(n), phase(n);
  for (std::size_t j = 0; j < n; ++j) {
    mean[j] = profile_rng.uniform(40.0, 60.0);
    amp[j] = profile_rng.uniform(8.0, 16.0);
    phase[j] = profile_rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  out.baseline = Tensor({steps, n, 1});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      const double diurnal = mean[j] + amp[j] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase[j]);
      out.baseline.at(t, j, 0) = std::max(0.0, diurnal + cfg.noise_std * noise_rng.normal());
    }
  }

  for (std::size_t block = 0; block * cfg.window < steps; ++block) {
    if (!event_rng.bernoulli(cfg.anomaly_rate)) {
      continue;
    }
    Anomaly a;
    a.onset = block * cfg.window + static_cast<std::size_t>(event_rng.below(cfg.window));
    a.node = static_cast<std::size_t>(event_rng.below(n));
    a.kind = static_cast<EventKind>(event_rng.below(4));
    a.duration = event_duration(a.kind);
    a.depth = cfg.anomaly_depth;
    if (a.onset < steps) out.anomalies.push_back(a);
  }
  for (const Anomaly& a : cfg.scripted) {
    if (a.onset >= steps || a.node >= n) throw ParameterError("scripted anomaly outside the series");
    out.anomalies.push_back(a);
  }
  std::stable_sort(out.anomalies.begin(), out.anomalies.end(), [](const Anomaly& x, const Anomaly& y) {
    return x.onset != y.onset ? x.onset < y.onset : x.node < y.node;
  });

  Tensor factor = Tensor::full({steps, n}, 1.0);
  for (const Anomaly& a : out.anomalies) {
    apply_anomaly(factor, out.data.graph, a);
    out.data.events.events.push_back(
        Event{a.onset, a.node, a.kind, event_text(a.kind, out.data.graph.node_names[a.node])});
  }

  out.data.series.step_minutes = cfg.step_minutes;
  out.data.series.speeds = out.baseline;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < n; ++j) out.data.series.speeds.at(t, j, 0) *= factor.at(t, j);
  }
  return out;
}

std::string window_text(const EventLog& events, std::size_t begin, std::size_t end) {
  std::string text;
  for (const Event& e : events.events) {
    if (e.time_index < begin || e.time_index >= end) continue;
    if (!text.empty()) text += ' ';
    text += e.text;
  }
  return text;
}

std::vector<Sample> windowize(const TrafficSeries& series, const EventLog& events, const Vocab& vocab,
                              std::size_t window, std::size_t text_length) {
  const std::size_t steps = series.steps();
  if (window == 0 || steps < 2 * window) {
    throw ParameterError("windowize: series of " + std::to_string(steps) + " steps is too short for window " +
                         std::to_string(window) + " (need >= " + std::to_string(2 * window) + ")");
  }
  const std::size_t n = series.nodes();
  const std::size_t c = series.channels();
  const std::size_t row = n * c;
  std::vector<Sample> samples;
  samples.reserve(steps - 2 * window + 1);
  for (std::size_t a = 0; a + 2 * window <= steps; ++a) {
    Sample s;
    s.anchor = a;
    s.x_hist = Tensor({window, n, c});
    s.y_future = Tensor({window, n, c});
    const double* src = series.speeds.data();
    std::copy(src + a * row, src + (a + window) * row, s.x_hist.data());
    std::copy(src + (a + window) * row, src + (a + 2 * window) * row, s.y_future.data());
    s.hist_text = window_text(events, a, a + window);
    s.future_text = window_text(events, a + window, a + 2 * window);
    s.text_hist = encode(s.hist_text, vocab, text_length);
    s.text_future = encode(s.future_text, vocab, text_length);
    samples.push_back(std::move(s));
  }
  return samples;
}

NormStats fit_norm_stats(const TrafficSeries& series, std::size_t row_end) {
  const std::size_t n = series.nodes();
  const std::size_t c = series.channels();
  row_end = std::min(row_end, series.steps());
  if (row_end == 0) throw ParameterError("fit_norm_stats: no rows to fit");
  NormStats st{Tensor({n, c}), Tensor({n, c})};
  const double inv = 1.0 / static_cast<double>(row_end);
  for (std::size_t j = 0; j < n * c; ++j) {
    double m = 0.0;
    for (std::size_t t = 0; t < row_end; ++t) m += series.speeds[t * n * c + j];
    m *= inv;
    double v = 0.0;
    for (std::size_t t = 0; t < row_end; ++t) {
      const double d = series.speeds[t * n * c + j] - m;
      v += d * d;
    }
    st.mean[j] = m;
    st.std[j] = std::max(std::sqrt(v * inv), kNormEps);
  }
  return st;
}

Tensor normalize_tensor(const Tensor& x, const NormStats& stats) {
  const std::size_t nc = stats.mean.size();
  if (x.size() % nc != 0) throw DimensionError("normalize: trailing axes do not match stats");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = i % nc;
    out[i] = (out[i] - stats.mean[j]) / stats.std[j];
  }
  return out;
}

Tensor denormalize_tensor(const Tensor& x, const NormStats& stats) {
  const std::size_t nc = stats.mean.size();
  if (x.size() % nc != 0) throw DimensionError("denormalize: trailing axes do not match stats");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = i % nc;
    out[i] = out[i] * stats.std[j] + stats.mean[j];
  }
  return out;
}

std::pair<TrafficSeries, NormStats> z_normalize(const TrafficSeries& series, const std::optional<NormStats>& stats) {
  NormStats st = stats ? *stats : fit_norm_stats(series, series.steps());
  TrafficSeries out;
  out.step_minutes = series.step_minutes;
  out.speeds = normalize_tensor(series.speeds, st);
  return {std::move(out), std::move(st)};
}

TrafficSeries denormalize(const TrafficSeries& series, const NormStats& stats) {
  TrafficSeries out;
  out.step_minutes = series.step_minutes;
  out.speeds = denormalize_tensor(series.speeds, stats);
  return out;
}

Split split_temporal(std::vector<Sample> samples, double ratio) {
  if (samples.size() < 2) throw ParameterError("split_temporal: need at least 2 samples");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("split_temporal: ratio must be in (0,1)");
  const std::size_t n = samples.size();
  std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  const std::size_t window = samples.front().x_hist.dim(0);
  Split split;
  split.train_candidates = n_train;
  split.boundary = samples[n_train].anchor;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      if (samples[i].anchor + 2 * window <= split.boundary) split.train.push_back(std::move(samples[i]));
    } else {
      split.test.push_back(std::move(samples[i]));
    }
  }
  return split;
}

}  // namespace ctl
