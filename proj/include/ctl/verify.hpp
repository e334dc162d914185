#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ctl {

struct VerifyOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Test hook forwarded to every gradient check.
  double corrupt_factor = 1.0;
  std::function<void(const std::string&)> log;
};

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
};

// Finite-difference probes (B=1, N=3, t=8, D=8) of the text encoder, the
// fusion stack, the predictor, the generator under several flag sets and the
// joint loss, once per seed.
std::vector<VerifyCheck> gradient_suite(const VerifyOptions& opts);
// Metrics, attention paths and structural invariants against straight-line
// reference code, plus SIMD/scalar kernel agreement.
std::vector<VerifyCheck> oracle_suite(std::uint64_t seed);

VerifyReport run_verify(const VerifyOptions& opts = {});

}  // namespace ctl
