// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace mvssm {

// SplitMix64 finalizer; the documented seed-splitting rule is
// child_seed = mix_seed(parent_seed, index).
std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index);

// Seeded generator. The engine is std::mt19937_64 (fully specified by the standard);
// the conversions to real numbers are done here rather than through <random>
// distributions, whose algorithms vary between standard libraries.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+splitmix64";

  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double open_uniform();                   // (0, 1)
  double normal();                         // standard normal, Box-Muller
  double gumbel();                         // standard Gumbel
  std::size_t index(std::size_t n);        // uniform in [0, n)

  SeededRng split(std::uint64_t index) const { return SeededRng(mix_seed(seed_, index)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mvssm
