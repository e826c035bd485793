// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. The file format is line based:
//
//   # comment
//   key = value   # trailing comments are allowed too
//
// Unknown keys and malformed lines are errors. to_text() renders every field in a fixed
// order; parsing that text gives back the same configuration.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mvssm/gendeg.hpp"
#include "mvssm/mvssem.hpp"

namespace mvssm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Stage { kGenDeg, kEnhancer };

struct RunConfig {
  Stage stage = Stage::kGenDeg;
  std::uint64_t seed = 1;

  // Data.
  std::size_t image_size = 64;    // clean scenes are image_size x image_size
  std::size_t crop_size = 32;     // enhancer views
  std::size_t train_images = 600;
  std::size_t holdout_images = 120;
  double severity_min = 0.25;
  double severity_max = 1.0;
  std::string data_dir;  // clean PPMs; empty = procedural scenes
  std::string test_dir;  // held-out clean PPMs; empty = procedural scenes
  std::string out_dir = ".";
  std::string gendeg_checkpoint;
  std::string enhancer_checkpoint;

  // Architecture.
  std::size_t patch_size = 4;      // GenDeg patch
  std::size_t backbone_patch = 4;  // stand-in feature extractor patch
  std::size_t channels = 64;
  std::size_t state_dim = 16;
  std::size_t classes = 64;  // K
  std::size_t d_inner = 128;
  std::size_t embed_dim = 128;  // C_z
  std::size_t blocks = 2;       // FEBs per enhancer stage
  double gumbel_temperature = 1.0;
  AblationSwitches ablation;

  // Optimisation.
  std::size_t batch_size = 12;
  std::size_t epochs = 40;
  double learning_rate = 1e-4;
  std::size_t lr_period = 100;  // epochs per halving
  double tau = 0.07;
  double l1_weight = 0.1;  // lambda inside L_rec
  double rec_weight = 1.0;
  double con_weight = 0.5;
  double cls_weight = 0.3;

  // Optimizer steps per epoch: one pass over train_images in batches.
  std::uint64_t steps_per_epoch() const;
  std::uint64_t total_steps() const { return steps_per_epoch() * epochs; }

  GenDegConfig gendeg() const;
  EnhancerConfig enhancer() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& config);
// Throws ConfigError naming the first offending field.
void validate(const RunConfig& config);

std::string_view stage_name(Stage stage);

}  // namespace mvssm
