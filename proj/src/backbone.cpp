// SPDX-License-Identifier: Apache-2.0

#include "mvssm/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "mvssm/gendeg.hpp"
#include "mvssm/ops.hpp"
#include "mvssm/rng.hpp"

namespace mvssm {

StandInBackbone::StandInBackbone(std::size_t patch, std::size_t channels, std::uint64_t seed)
    : patch_(patch), channels_(channels) {
  const std::size_t in = 3 * patch * patch;
  if (patch == 0 || channels < in)
    throw std::invalid_argument("stand-in backbone needs channels >= 3 * patch^2");
  // Modified Gram-Schmidt over `in` random vectors of length C.
  SeededRng rng(seed);
  std::vector<double> rows(in * channels);
  for (auto& v : rows) v = rng.normal();
  for (std::size_t i = 0; i < in; ++i) {
    double* ri = rows.data() + i * channels;
    for (std::size_t j = 0; j < i; ++j) {
      const double* rj = rows.data() + j * channels;
      double dot = 0.0;
      for (std::size_t c = 0; c < channels; ++c) dot += ri[c] * rj[c];
      for (std::size_t c = 0; c < channels; ++c) ri[c] -= dot * rj[c];
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < channels; ++c) norm += ri[c] * ri[c];
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < channels; ++c) ri[c] /= norm;
  }
  std::vector<double> t(channels * in);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t c = 0; c < channels; ++c) t[c * in + i] = rows[i * channels + c];
  basis_ = Tensor::from_vector({in, channels}, std::move(rows));
  basis_t_ = Tensor::from_vector({channels, in}, std::move(t));
}

Tensor StandInBackbone::encode(const Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) % patch_ || images.size(3) % patch_)
    throw ShapeError("backbone expects [B, 3, H, W] with H, W multiples of " + std::to_string(patch_) + ", got " +
                     shape_str(images.shape()));
  const std::size_t b = images.size(0), h = images.size(2) / patch_, w = images.size(3) / patch_;
  Tensor tokens = matmul(add_scalar(patchify(images, patch_), -0.5), basis_);  // [B, hw, C]
  return permute(reshape(tokens, {b, h, w, channels_}), {0, 3, 1, 2});
}

Tensor StandInBackbone::decode(const Tensor& features) const {
  if (features.dim() != 4 || features.size(1) != channels_)
    throw ShapeError("backbone decoder expects [B, " + std::to_string(channels_) + ", h, w], got " +
                     shape_str(features.shape()));
  const std::size_t b = features.size(0), h = features.size(2), w = features.size(3);
  Tensor tokens = reshape(permute(features, {0, 2, 3, 1}), {b, h * w, channels_});
  return unpatchify(add_scalar(matmul(tokens, basis_t_), 0.5), h * patch_, w * patch_, patch_);
}

}  // namespace mvssm
