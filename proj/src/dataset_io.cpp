#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ctl/dataset.hpp"
#include "ctl/error.hpp"

namespace ctl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetFormat = "ctl-dataset-v1";

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_speeds_csv(const TrafficSeries& series, const std::vector<std::string>& node_names, const fs::path& path) {
  if (series.channels() != 1) throw DimensionError("speeds.csv holds a single speed channel");
  auto out = open_out(path);
  out << "timestamp";
  for (const auto& name : node_names) out << ',' << name;
  out << '\n';
  const std::size_t n = series.nodes();
  for (std::size_t t = 0; t < series.steps(); ++t) {
    out << t * static_cast<std::size_t>(series.step_minutes);
    for (std::size_t j = 0; j < n; ++j) out << ',' << format_double(series.speeds.at(t, j, 0));
    out << '\n';
  }
}

TrafficSeries read_speeds_csv(const fs::path& path, std::vector<std::string>* node_names) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": line 1: missing header");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "timestamp") {
    throw ParseError(path.string() + ": line 1: header must start with 'timestamp'");
  }
  const std::size_t n = header.size() - 1;
  if (n == 0) throw ParseError(path.string() + ": line 1: no node columns");
  std::vector<double> values;
  std::vector<long long> stamps;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    long long stamp = 0;
    {
      const auto& c = cells[0];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), stamp);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": bad timestamp '" + c + "'");
      }
    }
    stamps.push_back(stamp);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const auto& c = cells[j];
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size() || !(v >= 0.0) || !std::isfinite(v)) {
        throw ParseError(path.string() + ": line " + std::to_string(line_no) + ", column " + std::to_string(j + 1) +
                         ": bad speed '" + c + "'");
      }
      values.push_back(v);
    }
  }
  const std::size_t steps = stamps.size();
  if (steps == 0) throw ParseError(path.string() + ": no data rows");
  TrafficSeries series;
  series.speeds = Tensor({steps, n, 1}, std::move(values));
  if (steps >= 2) {
    const long long step = stamps[1] - stamps[0];
    if (step <= 0) throw ParseError(path.string() + ": line 3: timestamps must increase");
    series.step_minutes = static_cast<int>(step);
  }
  if (node_names) node_names->assign(header.begin() + 1, header.end());
  return series;
}

void write_adjacency_json(const RoadGraph& graph, const fs::path& path) {
  json j;
  j["nodes"] = graph.node_names;
  json edges = json::array();
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    for (std::size_t k = 0; k < graph.n_nodes; ++k) {
      if (graph.adjacency.at(i, k) != 0.0) edges.push_back({i, k});
    }
  }
  j["edges"] = std::move(edges);
  auto out = open_out(path);
  out << j.dump() << '\n';
}

RoadGraph read_adjacency_json(const fs::path& path) {
  const json j = read_json_file(path);
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw ParseError(path.string() + ": missing \"nodes\" array");
  if (!j.contains("edges") || !j["edges"].is_array()) throw ParseError(path.string() + ": missing \"edges\" array");
  RoadGraph g;
  try {
    g.node_names = j["nodes"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": nodes: " + e.what());
  }
  g.n_nodes = g.node_names.size();
  if (g.n_nodes == 0) throw ParseError(path.string() + ": empty node list");
  g.adjacency = Tensor({g.n_nodes, g.n_nodes});
  std::size_t idx = 0;
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned()) {
      throw ParseError(path.string() + ": edge " + std::to_string(idx) + ": expected [i,j] with non-negative ints");
    }
    const auto a = e[0].get<std::size_t>();
    const auto b = e[1].get<std::size_t>();
    if (a >= g.n_nodes || b >= g.n_nodes) {
      throw ParseError(path.string() + ": edge " + std::to_string(idx) + ": node index out of range");
    }
    if (a == b) throw ParseError(path.string() + ": edge " + std::to_string(idx) + ": self-loop");
    g.adjacency.at(a, b) = 1.0;
    ++idx;
  }
  for (std::size_t a = 0; a < g.n_nodes; ++a) {
    for (std::size_t b = 0; b < g.n_nodes; ++b) {
      if (g.adjacency.at(a, b) != g.adjacency.at(b, a)) {
        throw ParseError(path.string() + ": asymmetric edge list: [" + std::to_string(a) + "," + std::to_string(b) +
                         "] has no reverse edge");
      }
    }
  }
  return g;
}

void write_events_jsonl(const EventLog& log, const fs::path& path) {
  auto out = open_out(path);
  for (const Event& e : log.events) {
    json j;
    j["t"] = e.time_index;
    j["node"] = e.node_index;
    j["kind"] = std::string(to_string(e.kind));
    j["text"] = e.text;
    out << j.dump() << '\n';
  }
}

EventLog read_events_jsonl(const fs::path& path, std::size_t n_steps, std::size_t n_nodes) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  EventLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + "offset " + std::to_string(e.byte) + ": " + e.what());
    }
    try {
      Event e;
      e.time_index = j.at("t").get<std::size_t>();
      e.node_index = j.at("node").get<std::size_t>();
      e.kind = parse_event_kind(j.at("kind").get<std::string>());
      e.text = j.at("text").get<std::string>();
      if (e.time_index >= n_steps) throw ParseError(where + "t out of range");
      if (e.node_index >= n_nodes) throw ParseError(where + "node out of range");
      if (e.text.empty()) throw ParseError(where + "empty text");
      log.events.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(where + ex.what());
    } catch (const ParameterError& ex) {
      throw ParseError(where + ex.what());
    }
  }
  return log;
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
  write_speeds_csv(data.series, data.graph.node_names, dir / "speeds.csv");
  write_adjacency_json(data.graph, dir / "adjacency.json");
  write_events_jsonl(data.events, dir / "events.jsonl");
  json m;
  m["format"] = kDatasetFormat;
  m["speeds"] = "speeds.csv";
  m["adjacency"] = "adjacency.json";
  m["events"] = "events.jsonl";
  m["step_minutes"] = data.series.step_minutes;
  m["seed"] = data.seed;
  m["n_nodes"] = data.graph.n_nodes;
  m["n_steps"] = data.series.steps();
  auto out = open_out(dir / "manifest.json");
  out << m.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json m = read_json_file(manifest_path);
  Dataset d;
  try {
    if (m.value("format", std::string()) != kDatasetFormat) {
      throw ParseError(manifest_path.string() + ": unsupported format");
    }
    std::vector<std::string> names;
    d.series = read_speeds_csv(dir / m.at("speeds").get<std::string>(), &names);
    d.series.step_minutes = m.at("step_minutes").get<int>();
    d.graph = read_adjacency_json(dir / m.at("adjacency").get<std::string>());
    d.events = read_events_jsonl(dir / m.at("events").get<std::string>(), d.series.steps(), d.graph.n_nodes);
    d.seed = m.at("seed").get<std::uint64_t>();
    if (names != d.graph.node_names) {
      throw ParseError(manifest_path.string() + ": speeds.csv columns do not match adjacency.json nodes");
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace ctl
