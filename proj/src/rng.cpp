// SPDX-License-Identifier: Apache-2.0

#include "mvssm/rng.hpp"

#include <cmath>
#include <numbers>

namespace mvssm {

std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index) {
  std::uint64_t z = parent + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed, 0)) {}

double SeededRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::open_uniform() {
  return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
}

double SeededRng::normal() {
  const double u1 = open_uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::gumbel() { return -std::log(-std::log(open_uniform())); }

std::size_t SeededRng::index(std::size_t n) {
  __extension__ using u128 = unsigned __int128;
  const u128 product = static_cast<u128>(engine_()) * n;
  return static_cast<std::size_t>(product >> 64);
}

}  // namespace mvssm
