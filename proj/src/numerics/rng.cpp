#include "ctl/rng.hpp"

#include <cmath>
#include <numbers>

#include "ctl/error.hpp"

namespace ctl {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngState::next_u64() {
  ++counter;
  return mix64(seed + counter * 0x9E3779B97F4A7C15ULL);
}

double RngState::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngState::below(std::uint64_t n) {
  if (n == 0) throw ParameterError("RngState::below requires n > 0");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngState::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngState RngState::fork(std::uint64_t stream) const {
  return RngState(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ULL)), 0);
}

Tensor random_normal(const Tensor::Shape& shape, double stddev, RngState& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

Tensor random_uniform(const Tensor::Shape& shape, double lo, double hi, RngState& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

void shuffle_indices(std::vector<std::size_t>& idx, RngState& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace ctl
