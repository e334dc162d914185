#pragma once

#include <cstdint>
#include <vector>

#include "ctl/tensor.hpp"

namespace ctl {

// Counter-based generator: draw i is splitmix64(seed, i). The sequence depends
// only on (seed, counter), never on the standard library's distributions.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  explicit RngState(std::uint64_t s = 0, std::uint64_t c = 0) : seed(s), counter(c) {}

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream, e.g. one per epoch or per tensor.
  RngState fork(std::uint64_t stream) const;
};

Tensor random_normal(const Tensor::Shape& shape, double stddev, RngState& rng);
Tensor random_uniform(const Tensor::Shape& shape, double lo, double hi, RngState& rng);

// Fisher-Yates with the generator above.
void shuffle_indices(std::vector<std::size_t>& idx, RngState& rng);

}  // namespace ctl
