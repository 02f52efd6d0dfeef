// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace pcdp {

// xoshiro256** seeded through splitmix64. Every draw is produced with integer
// arithmetic plus std::log/std::sqrt/std::cos, so a given seed yields the same
// stream on any IEEE-754 platform (std::normal_distribution does not promise
// that, hence the hand-rolled Gaussian).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal via Box-Muller; caches the second variate.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream named `name`. Streams with different names never
  // share state, so enabling one feature does not shift another's draws.
  SeededRng fork(std::string_view name) const;
  SeededRng fork(std::string_view name, std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace pcdp
