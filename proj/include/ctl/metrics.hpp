#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctl/tensor.hpp"

namespace ctl {

using Tokens = std::vector<std::string>;

double mae(std::span<const double> y, std::span<const double> y_hat);
double rmse(std::span<const double> y, std::span<const double> y_hat);

// Sentence BLEU-4 on a 0-100 scale: clipped n-gram precisions, uniform
// weights, no smoothing (any zero precision gives 0). Empty hyp gives 0.
double bleu4(const Tokens& hyp, const std::vector<Tokens>& refs);
double bleu4(const Tokens& hyp, const Tokens& ref);

inline constexpr double kMeteorAlpha = 0.9;
inline constexpr double kMeteorBeta = 3.0;
inline constexpr double kMeteorGamma = 0.5;

// Exact-match METEOR. Each hyp token, left to right, aligns to the leftmost
// unused equal ref token.
double meteor(const Tokens& hyp, const Tokens& ref);

std::size_t lcs_length(const Tokens& x, const Tokens& y);
// LCS F-measure with beta = 1; empty hyp or ref gives 0.
double rouge_l(const Tokens& hyp, const Tokens& ref);

// Full-scale figures for side-by-side tables. Not targets.
namespace reference {
inline constexpr double kMaeT5 = 3.25;
inline constexpr double kRmseT5 = 4.86;
inline constexpr double kNoTextMaeT5 = 3.31;
inline constexpr double kBleu4 = 71.58;
inline constexpr double kMeteor = 72.56;
inline constexpr double kRougeL = 89.64;
}  // namespace reference

inline const std::vector<std::size_t> kDefaultHorizons{5, 10, 15};

struct HorizonMetrics {
  std::size_t horizon = 0;  // requested
  std::size_t steps = 0;    // used, after clipping to the window
  double mae = 0.0;
  double rmse = 0.0;

  friend bool operator==(const HorizonMetrics&, const HorizonMetrics&) = default;
};

struct MetricReport {
  std::vector<HorizonMetrics> horizons;
  double bleu4 = 0.0;
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::size_t n_samples = 0;
  std::vector<std::string> warnings;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// forecasts/targets: per sample [t,N,C] in km/h. Errors over the first
// min(h, t) steps. Texts are scored per sample and averaged; a pair of empty
// texts counts as a perfect match, one empty side scores 0.
MetricReport evaluate_run(const std::vector<Tensor>& forecasts, const std::vector<Tensor>& targets,
                          const std::vector<Tokens>& gen_texts, const std::vector<Tokens>& ref_texts,
                          const std::vector<std::size_t>& horizons = kDefaultHorizons);

std::string report_to_json(const MetricReport& report, int indent = 2);
MetricReport report_from_json(std::string_view text);  // throws ParseError
// Empty when the document matches the report schema, else one message per problem.
std::vector<std::string> validate_report_json(std::string_view text);
// horizon,steps,mae,rmse
void write_horizon_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace ctl
