#include "ctl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctl/error.hpp"
#include "ctl/rng.hpp"

namespace ctl {

double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << ": " << checked << " coordinates over " << tensors
     << " tensors, max rel error " << max_rel_error;
  if (!worst_tensor.empty()) os << " (" << worst_tensor << ")";
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 10); ++i) {
    const auto& f = failures[i];
    os << "\n  " << f.tensor << "[" << f.index << "] analytic " << f.analytic << " numeric " << f.numeric
       << " rel " << f.rel_error;
  }
  if (failures.size() > 10) os << "\n  ... " << failures.size() - 10 << " more";
  return os.str();
}

GradCheckReport grad_check(const std::function<double()>& loss, const ParamList& params, const ParamList& grads,
                           const GradCheckOptions& opts) {
  if (params.size() != grads.size()) throw DimensionError("grad_check: parameter and gradient lists differ");
  GradCheckReport report;
  RngState rng(opts.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t].tensor;
    const Tensor& g = *grads[t].tensor;
    require_same_shape(p, g, "grad_check");
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > opts.max_coords) {
      shuffle_indices(coords, rng);
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    ++report.tensors;
    for (std::size_t idx : coords) {
      const double saved = p[idx];
      p[idx] = saved + opts.step;
      const double up = loss();
      p[idx] = saved - opts.step;
      const double down = loss();
      p[idx] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = g[idx] * opts.corrupt_factor;
      const double rel = grad_rel_error(analytic, numeric);
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = rel;
        report.worst_tensor = params[t].name;
      }
      if (!(rel < opts.tol)) {
        report.passed = false;
        report.failures.push_back({params[t].name, idx, analytic, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace ctl
