#include "ctl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ctl/error.hpp"

namespace ctl {

using nlohmann::json;

namespace {

void check_pair(std::span<const double> y, std::span<const double> y_hat, const char* what) {
  if (y.size() != y_hat.size()) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(y.size()) + " vs " +
                         std::to_string(y_hat.size()));
  }
  if (y.empty()) throw DimensionError(std::string(what) + ": empty input");
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[Tokens(t.begin() + i, t.begin() + i + n)];
  return counts;
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  check_pair(y, y_hat, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

double bleu4(const Tokens& hyp, const std::vector<Tokens>& refs) {
  if (hyp.empty() || refs.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    std::map<Tokens, std::size_t> max_ref;
    for (const Tokens& r : refs) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, c] : h) {
      total += c;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double c = static_cast<double>(hyp.size());
  double r = static_cast<double>(refs.front().size());
  for (const Tokens& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum);
}

double bleu4(const Tokens& hyp, const Tokens& ref) { return bleu4(hyp, std::vector<Tokens>{ref}); }

double meteor(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::vector<bool> used(ref.size(), false);
  std::vector<long> align(hyp.size(), -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == hyp[i]) {
        used[j] = true;
        align[i] = static_cast<long>(j);
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;
  std::size_t chunks = 0;
  long prev = -2;
  bool in_chunk = false;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || align[i] != prev + 1) ++chunks;
    in_chunk = true;
    prev = align[i];
  }
  const double p = static_cast<double>(m) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(m) / static_cast<double>(ref.size());
  const double f = p * r / (kMeteorAlpha * p + (1.0 - kMeteorAlpha) * r);
  const double frag = static_cast<double>(chunks) / static_cast<double>(m);
  return (1.0 - kMeteorGamma * std::pow(frag, kMeteorBeta)) * f;
}

std::size_t lcs_length(const Tokens& x, const Tokens& y) {
  std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j) {
      cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

double rouge_l(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

MetricReport evaluate_run(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                          const std::vector<Tokens>& gen_texts, const std::vector<Tokens>& ref_texts,
                          const std::vector<std::size_t>& horizons) {
  if (forecasts.size() != targets.size()) {
    throw DimensionError("evaluate_run: " + std::to_string(forecasts.size()) + " forecasts vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (gen_texts.size() != ref_texts.size()) {
    throw DimensionError("evaluate_run: " + std::to_string(gen_texts.size()) + " generated texts vs " +
                         std::to_string(ref_texts.size()) + " references");
  }
  if (!gen_texts.empty() && gen_texts.size() != forecasts.size() && !forecasts.empty()) {
    throw DimensionError("evaluate_run: text and forecast sample counts differ");
  }
  MetricReport rep;
  rep.n_samples = std::max(forecasts.size(), gen_texts.size());
  if (!forecasts.empty()) {
    const Tensor::Shape shape = forecasts.front().shape();
    if (shape.size() != 3) throw DimensionError("evaluate_run: forecasts must be [t,N,C]");
    for (std::size_t i = 0; i < forecasts.size(); ++i) {
      if (forecasts[i].shape() != shape || targets[i].shape() != shape) {
        throw DimensionError("evaluate_run: sample " + std::to_string(i) + " shape mismatch");
      }
    }
    const std::size_t t = shape[0];
    const std::size_t row = shape[1] * shape[2];
    for (std::size_t h : horizons) {
      if (h == 0) throw ParameterError("evaluate_run: horizon must be positive");
      const std::size_t steps = std::min(h, t);
      if (steps < h) {
        rep.warnings.push_back("horizon " + std::to_string(h) + " exceeds the " + std::to_string(t) +
                               "-step window; clipped to " + std::to_string(steps));
      }
      std::vector<double> y, yh;
      y.reserve(forecasts.size() * steps * row);
      yh.reserve(y.capacity());
      for (std::size_t i = 0; i < forecasts.size(); ++i) {
        y.insert(y.end(), targets[i].data(), targets[i].data() + steps * row);
        yh.insert(yh.end(), forecasts[i].data(), forecasts[i].data() + steps * row);
      }
      rep.horizons.push_back({h, steps, mae(y, yh), rmse(y, yh)});
    }
  }
  if (!gen_texts.empty()) {
    double b = 0.0, m = 0.0, r = 0.0;
    for (std::size_t i = 0; i < gen_texts.size(); ++i) {
      const Tokens& hyp = gen_texts[i];
      const Tokens& ref = ref_texts[i];
      if (hyp.empty() && ref.empty()) {
        b += 100.0;
        m += 1.0;
        r += 1.0;
        continue;
      }
      b += bleu4(hyp, ref);
      m += meteor(hyp, ref);
      r += rouge_l(hyp, ref);
    }
    const double n = static_cast<double>(gen_texts.size());
    rep.bleu4 = b / n;
    rep.meteor = m / n;
    rep.rouge_l = r / n;
  }
  return rep;
}

std::string report_to_json(const MetricReport& report, int indent) {
  json j;
  j["pred"] = json::object();
  for (const auto& h : report.horizons) {
    j["pred"]["T" + std::to_string(h.horizon)] = {{"mae", h.mae}, {"rmse", h.rmse}, {"steps", h.steps}};
  }
  j["text"] = {{"bleu4", report.bleu4}, {"meteor", report.meteor}, {"rouge_l", report.rouge_l}};
  j["n_samples"] = report.n_samples;
  j["warnings"] = report.warnings;
  return j.dump(indent);
}

std::vector<std::string> validate_report_json(std::string_view text) {
  std::vector<std::string> errs;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    return {std::string("not JSON: ") + e.what()};
  }
  if (!j.is_object()) return {"top level must be an object"};
  if (!j.contains("pred") || !j["pred"].is_object()) {
    errs.push_back("missing object 'pred'");
  } else {
    if (j["pred"].empty()) errs.push_back("'pred' has no horizons");
    for (const auto& [key, val] : j["pred"].items()) {
      if (key.size() < 2 || key[0] != 'T' || !std::all_of(key.begin() + 1, key.end(), ::isdigit)) {
        errs.push_back("pred key '" + key + "' is not of the form T<steps>");
      }
      if (!val.is_object() || !val.contains("mae") || !val.contains("rmse") || !val["mae"].is_number() ||
          !val["rmse"].is_number()) {
        errs.push_back("pred." + key + " needs numeric mae and rmse");
        continue;
      }
      const double m = val["mae"].get<double>(), r = val["rmse"].get<double>();
      if (!(m >= 0.0)) errs.push_back("pred." + key + ".mae must be >= 0");
      // one-ulp slack: with identical errors sqrt(mean(e^2)) may round below mean|e|
      if (!(r >= m * (1.0 - 1e-15))) errs.push_back("pred." + key + ": rmse < mae");
      if (val.contains("steps") && !val["steps"].is_number_unsigned()) {
        errs.push_back("pred." + key + ".steps must be a non-negative integer");
      }
    }
  }
  if (!j.contains("text") || !j["text"].is_object()) {
    errs.push_back("missing object 'text'");
  } else {
    const auto check = [&](const char* key, double hi) {
      const json& t = j["text"];
      if (!t.contains(key) || !t[key].is_number()) {
        errs.push_back(std::string("text.") + key + " must be a number");
        return;
      }
      const double v = t[key].get<double>();
      if (!(v >= 0.0 && v <= hi)) errs.push_back(std::string("text.") + key + " outside [0," + std::to_string(hi) + "]");
    };
    check("bleu4", 100.0);
    check("meteor", 1.0);
    check("rouge_l", 1.0);
  }
  if (j.contains("n_samples") && !j["n_samples"].is_number_unsigned()) {
    errs.push_back("n_samples must be a non-negative integer");
  }
  if (j.contains("warnings") && !j["warnings"].is_array()) errs.push_back("warnings must be an array");
  return errs;
}

MetricReport report_from_json(std::string_view text) {
  const auto errs = validate_report_json(text);
  if (!errs.empty()) throw ParseError("report.json: " + errs.front());
  const json j = json::parse(text);
  MetricReport rep;
  for (const auto& [key, val] : j["pred"].items()) {
    HorizonMetrics h;
    h.horizon = std::stoul(key.substr(1));
    h.steps = val.value("steps", h.horizon);
    h.mae = val["mae"].get<double>();
    h.rmse = val["rmse"].get<double>();
    rep.horizons.push_back(h);
  }
  std::sort(rep.horizons.begin(), rep.horizons.end(),
            [](const HorizonMetrics& a, const HorizonMetrics& b) { return a.horizon < b.horizon; });
  rep.bleu4 = j["text"]["bleu4"].get<double>();
  rep.meteor = j["text"]["meteor"].get<double>();
  rep.rouge_l = j["text"]["rouge_l"].get<double>();
  rep.n_samples = j.value("n_samples", std::size_t{0});
  if (j.contains("warnings")) rep.warnings = j["warnings"].get<std::vector<std::string>>();
  return rep;
}

void write_horizon_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "horizon,steps,mae,rmse\n";
  for (const auto& h : report.horizons) out << h.horizon << ',' << h.steps << ',' << h.mae << ',' << h.rmse << '\n';
}

}  // namespace ctl
