#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctl/nn.hpp"

namespace ctl {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::size_t max_coords = 64;  // per tensor; coordinates are sampled when larger
  std::uint64_t seed = 0;
  // Test hook: analytic gradients are multiplied by this before comparison.
  double corrupt_factor = 1.0;
};

struct GradCheckFailure {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t checked = 0;
  std::size_t tensors = 0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<GradCheckFailure> failures;

  std::string summary() const;
};

// |a - b| / max(1, |a|, |b|)
double grad_rel_error(double analytic, double numeric);

// Central differences of `loss` against precomputed analytic gradients.
// params and grads are matched by position and must have equal shapes.
// Parameters are restored bit-exactly after each probe.
GradCheckReport grad_check(const std::function<double()>& loss, const ParamList& params, const ParamList& grads,
                           const GradCheckOptions& opts = {});

}  // namespace ctl
