// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mvssm/image.hpp"
#include "mvssm/parameter.hpp"
#include "mvssm/tensor.hpp"

namespace mvssm {

// [B, 3, H, W] batch from planar images of equal size.
Tensor images_to_batch(const std::vector<ImageRGB>& images);
ImageRGB batch_item_to_image(const Tensor& batch, std::size_t index);

// [B, 3, H, W] -> [B, (H/p)(W/p), 3 p^2], tokens row-major over the patch grid.
Tensor patchify(const Tensor& images, std::size_t patch);
// Inverse of patchify.
Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t patch);

struct GenDegConfig {
  std::size_t patch = 8;
  std::size_t width = 64;      // token width inside the encoders
  std::size_t hidden = 128;    // MLP hidden width
  std::size_t embed_dim = 128;  // C_z
  std::size_t encoder_blocks = 2;
  std::size_t classes = 6;
  std::size_t proxy_patch = 4;
  std::size_t proxy_features = 16;
  std::uint64_t proxy_seed = 0x5eedf00dULL;
  double temperature = 0.07;  // contrastive tau
  double l1_weight = 0.1;
  double rec_weight = 1.0;
  double con_weight = 0.5;
  double cls_weight = 0.3;
};

// Residual token MLP: h + Mlp(layer_norm(h)).
struct ResidualMlp {
  Mlp mlp;
  static ResidualMlp create(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                            SeededRng& rng);
  Tensor operator()(const Tensor& h) const;
};

class GenDeg {
 public:
  static GenDeg create(ParameterStore& store, const GenDegConfig& config, SeededRng& rng);

  // [B, 3, H, W] -> z_deg [B, C_z].
  Tensor encode(const Tensor& degraded) const;
  // clean [B, 3, H, W], z [B, C_z] -> predicted degraded image in (0, 1), [B, 3, H, W].
  Tensor reconstruct(const Tensor& clean, const Tensor& z) const;
  // z [B, C_z] -> logits [B, classes].
  Tensor classify(const Tensor& z) const;
  // Frozen random patch features used by the perceptual term, [B, T, proxy_features].
  Tensor proxy_features(const Tensor& images) const;

  const GenDegConfig& config() const { return config_; }

  // Degradation encoder.
  Linear deg_embed;
  std::vector<ResidualMlp> deg_blocks;
  Linear deg_head;
  // Content encoder / decoder.
  Linear content_embed;
  ResidualMlp content_block;
  Linear film;  // z -> (scale, shift)
  ResidualMlp decoder_block;
  Linear decoder_out;
  Linear classifier;
  Linear proxy;  // frozen

 private:
  void check_images(const Tensor& images) const;
  GenDegConfig config_;
};

struct GenDegLosses {
  Tensor rec, con, cls, total;
};

// lambda * mean|pred - target| + mean squared proxy-feature distance.
Tensor loss_rec(const GenDeg& model, const Tensor& pred, const Tensor& target);
// Supervised contrastive loss over cosine similarities; anchors without a positive are
// skipped and several positives are averaged.
Tensor loss_contrastive(const Tensor& z, const std::vector<int>& labels, double temperature);
// Mean cross-entropy.
Tensor loss_classify(const Tensor& logits, const std::vector<int>& labels);
Tensor loss_total(const Tensor& rec, const Tensor& con, const Tensor& cls, const GenDegConfig& config);
double loss_total(double rec, double con, double cls, const GenDegConfig& config = {});

GenDegLosses gendeg_losses(const GenDeg& model, const Tensor& clean, const Tensor& degraded,
                           const std::vector<int>& labels);

}  // namespace mvssm
