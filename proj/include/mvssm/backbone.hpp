// SPDX-License-Identifier: Apache-2.0
//
// Frozen stand-in for a feedforward 3DGS feature extractor. Each p x p RGB patch
// (3 p^2 values, centred at 0.5) is mapped to C channels by a seeded matrix with
// orthonormal rows, and the decoder is its transpose, so decode(encode(x)) == x up to
// rounding whenever C >= 3 p^2.

#pragma once

#include <cstdint>

#include "mvssm/tensor.hpp"

namespace mvssm {

class StandInBackbone {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0xbac0b0e5ULL;

  StandInBackbone(std::size_t patch, std::size_t channels, std::uint64_t seed = kDefaultSeed);

  // [B, 3, H, W] -> [B, C, H/p, W/p].
  Tensor encode(const Tensor& images) const;
  // [B, C, h, w] -> [B, 3, h p, w p], not clipped.
  Tensor decode(const Tensor& features) const;

  std::size_t patch() const { return patch_; }
  std::size_t channels() const { return channels_; }
  // [3 p^2, C], rows orthonormal.
  const Tensor& basis() const { return basis_; }

 private:
  std::size_t patch_;
  std::size_t channels_;
  Tensor basis_;
  Tensor basis_t_;
};

}  // namespace mvssm
