// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mvssm/parameter.hpp"
#include "mvssm/router.hpp"
#include "mvssm/ssm.hpp"

namespace mvssm {

// [B, V, C, H, W] <-> [B, L, C] with L = V*H*W, view-major then row-major spatial.
Tensor flatten_multiview(const Tensor& x);
Tensor unflatten_multiview(const Tensor& tokens, std::size_t views, std::size_t height, std::size_t width);
inline std::size_t multiview_token_index(std::size_t v, std::size_t h, std::size_t w, std::size_t height,
                                         std::size_t width) {
  return (v * height + h) * width + w;
}

// Three two-layer MLPs mapping z to positive gates 2*sigmoid(.) in (0, 2); the output
// layers start at zero so fresh gates are exactly 1.
struct ModulationHeads {
  Mlp phi_b, phi_c, phi_delta;

  static ModulationHeads create(ParameterStore& store, const std::string& name, std::size_t z_dim,
                                std::size_t hidden, std::size_t state_dim, std::size_t channels, SeededRng& rng);
  // z: [z_dim]. Returns gates for b [N], c [N] and the step [C]; c_offset is left empty.
  ScanModulation operator()(const Tensor& z) const;
};

// Switches for the ablation axes and the two cross-stage channels.
struct AblationSwitches {
  bool degradation = true;       // z-driven gates on b, c and the step
  bool semantic_reorder = true;  // sort tokens by routed class before scanning
  bool multi_view = true;        // scan views jointly instead of one sequence per view
  bool cross_state = true;       // coarse final hidden state seeds the fine scans
  bool cross_offset = true;      // upsampled coarse C-offset field is added to the fine C
};

struct FebConfig {
  std::size_t channels = 64;
  std::size_t state_dim = 16;
  std::size_t classes = 64;
  std::size_t d_inner = 128;
  std::size_t mlp_hidden = 128;
  std::size_t z_dim = 128;
  std::size_t head_hidden = 64;
  double temperature = 1.0;
  bool hard_routing = true;
};

struct TokenGrid {
  std::size_t views = 1, height = 1, width = 1;
  std::size_t tokens() const { return views * height * width; }
  std::size_t per_view() const { return height * width; }
};

// What a stage hands to the next: per-sequence final hidden states [V, C, N] and the
// semantic C-offset field [L, N] in original token order.
struct CrossStageState {
  Tensor hidden;
  Tensor c_field;
  bool empty() const { return !hidden.defined() && !c_field.defined(); }
};

struct FebStats {
  std::string label;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<std::size_t> class_histogram;
};

struct FebOutput {
  Tensor tokens;  // [L, C]
  CrossStageState state;
  std::vector<std::size_t> class_index;
};

// Feature Enhancement Block.
class Feb {
 public:
  static Feb create(ParameterStore& store, const std::string& name, const FebConfig& config, SeededRng& rng);

  // tokens [L, C] for one batch item laid out by `grid`; z [z_dim]; noise null = no Gumbel noise.
  FebOutput operator()(const Tensor& tokens, const TokenGrid& grid, const Tensor& z, const CrossStageState& incoming,
                       const AblationSwitches& ablation, SeededRng* noise) const;

  const FebConfig& config() const { return config_; }

  SemanticRouter router;
  ModulationHeads heads;
  SelectiveScan scan;
  Linear in_proj;   // raw tokens -> scanned values
  Linear out_proj;  // scan output -> residual branch, zero-initialised
  Mlp mlp;          // token MLP, output layer zero-initialised

 private:
  FebConfig config_;
};

struct EnhancerConfig {
  FebConfig feb;
  std::size_t blocks_fine = 2;    // first full-resolution stack
  std::size_t blocks_coarse = 2;  // half-resolution stack
  std::size_t blocks_decode = 2;  // full-resolution stack after upsampling
  AblationSwitches ablation;
};

// Two-scale encoder-decoder of FEBs over multi-view feature maps.
class Enhancer {
 public:
  static Enhancer create(ParameterStore& store, const EnhancerConfig& config, SeededRng& rng);

  // features [B, V, C, H, W]; z [B, z_dim] or per view [B, V, z_dim] (mean over views).
  // Returns the enhanced map with the same shape. `stats` (optional) receives one entry
  // per block and batch item.
  Tensor operator()(const Tensor& features, const Tensor& z, SeededRng* noise,
                    std::vector<FebStats>* stats = nullptr) const;

  const EnhancerConfig& config() const { return config_; }
  EnhancerConfig& mutable_config() { return config_; }

  std::vector<Feb> fine, coarse, decode;
  Linear fuse;      // upsampled coarse tokens into the skip path, zero-initialised
  Linear out_proj;  // final residual projection, zero-initialised

 private:
  Tensor enhance_item(const Tensor& tokens, const TokenGrid& grid, const Tensor& z, SeededRng* noise,
                      std::vector<FebStats>* stats) const;
  EnhancerConfig config_;
};

// 2x2 strided mean and nearest-neighbour upsampling on view-major token grids.
Tensor downsample_tokens(const Tensor& tokens, const TokenGrid& grid);
std::vector<std::size_t> upsample_index(const TokenGrid& fine);

}  // namespace mvssm
