// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale training and evaluation. Every random choice of a run is drawn from a
// stream derived from (seed, purpose, index), never from a generator that carries
// state across steps, so a run resumed from a checkpoint at step s continues exactly
// as the uninterrupted run would.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvssm/backbone.hpp"
#include "mvssm/checkpoint.hpp"
#include "mvssm/config.hpp"
#include "mvssm/degradations.hpp"
#include "mvssm/gendeg.hpp"
#include "mvssm/image.hpp"
#include "mvssm/mvssem.hpp"

namespace mvssm {

// Bad or missing input data (as opposed to a bad command line or configuration).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sorted *.ppm files of `dir`, each centre-cropped to size x size.
std::vector<ImageRGB> load_clean_images(const std::string& dir, std::size_t size);
std::vector<ImageRGB> procedural_scenes(std::uint64_t seed, std::size_t count, std::size_t size);

// Training scenes (data_dir or procedural) and held-out scenes (test_dir or procedural),
// `per_scene` corpus items being drawn from each scene.
std::vector<ImageRGB> training_scenes(const RunConfig& config, std::size_t per_scene);
std::vector<ImageRGB> holdout_scenes(const RunConfig& config, std::size_t per_scene);

struct LabeledImage {
  ImageRGB clean;
  ImageRGB degraded;
  DegradationSpec spec;
};

// Item k has kind k mod 6 and uses scene (k / 6) mod scenes.size(); severity and the
// degradation stream come from mix_seed(seed, k).
std::vector<LabeledImage> build_corpus(const std::vector<ImageRGB>& scenes, std::size_t count, double severity_min,
                                       double severity_max, std::uint64_t seed);

struct LossRecord {
  std::uint64_t step = 0;
  double rec = 0.0, con = 0.0, cls = 0.0, total = 0.0;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

void write_loss_header(std::ostream& out, bool gendeg);
void write_loss_record(std::ostream& out, const LossRecord& record, bool gendeg);

class GenDegTrainer {
 public:
  explicit GenDegTrainer(const RunConfig& config);
  GenDegTrainer(const RunConfig& config, const std::vector<ImageRGB>& train_scenes,
                const std::vector<ImageRGB>& heldout_scenes);

  // Parameters, optimizer moments and the step counter.
  void resume(const Checkpoint& checkpoint);
  LossRecord train_step();
  // Runs until `until_step` (clamped to the configured total); log is optional.
  std::vector<LossRecord> train(std::uint64_t until_step, std::ostream* log = nullptr);
  Checkpoint checkpoint() const;

  // Fraction of held-out items whose classifier argmax equals the true kind.
  double holdout_accuracy() const;
  // Indices of the items in the batch for `step` (two or more per class).
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  std::uint64_t step() const { return step_; }
  const RunConfig& config() const { return config_; }
  const GenDeg& model() const { return model_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const std::vector<LabeledImage>& corpus() const { return corpus_; }
  const std::vector<LabeledImage>& holdout() const { return holdout_; }

 private:
  RunConfig config_;
  std::unique_ptr<ParameterStore> store_;
  GenDeg model_;
  std::vector<LabeledImage> corpus_;
  std::vector<LabeledImage> holdout_;
  std::array<std::vector<std::size_t>, kDegradationClasses> by_class_;
  std::uint64_t step_ = 0;
};

// A GenDeg rebuilt from a checkpoint (architecture from its echoed configuration)
// with every parameter frozen.
class FrozenGenDeg {
 public:
  explicit FrozenGenDeg(const Checkpoint& checkpoint);
  // Degradation embeddings of a list of equally sized images, [n, C_z]; no tape use.
  Tensor embed(const std::vector<ImageRGB>& images) const;
  const GenDeg& model() const { return model_; }
  const ParameterStore& store() const { return *store_; }
  const RunConfig& config() const { return config_; }

 private:
  RunConfig config_;
  std::unique_ptr<ParameterStore> store_;
  GenDeg model_;
};

// Two overlapping crops of one scene degraded with one shared spec.
struct ViewPair {
  std::array<ImageRGB, 2> clean;
  std::array<ImageRGB, 2> degraded;
  DegradationSpec spec;
};

// Crop origins: view 0 uniform in the scene, view 1 shifted by at most crop/4 per
// axis, so the views share at least (3/4)^2 of their area.
ViewPair sample_view_pair(const ImageRGB& scene, std::size_t crop, const DegradationSpec& spec, SeededRng& rng);
// Area fraction shared by two equal crops at the given origins.
double crop_overlap(std::size_t crop, std::size_t top0, std::size_t left0, std::size_t top1, std::size_t left1);

// Backbone features and z of a view pair, ready for the enhancer.
struct PreparedPair {
  Tensor clean;     // [1, 2, C, h, w]
  Tensor degraded;  // [1, 2, C, h, w]
  Tensor z;         // [1, 2, C_z]
};

class EnhancerTrainer {
 public:
  EnhancerTrainer(const RunConfig& config, const Checkpoint& gendeg);
  EnhancerTrainer(const RunConfig& config, const Checkpoint& gendeg, const std::vector<ImageRGB>& train_scenes,
                  const std::vector<ImageRGB>& heldout_scenes);

  void resume(const Checkpoint& checkpoint);
  LossRecord train_step();
  std::vector<LossRecord> train(std::uint64_t until_step, std::ostream* log = nullptr);
  Checkpoint checkpoint() const;

  PreparedPair prepare(const ViewPair& pair) const;
  // Mean feature L1 of the enhancer output on the held-out pairs (no Gumbel noise).
  double validation_loss() const;
  // The same for the untouched degraded features.
  double baseline_loss() const;

  std::uint64_t step() const { return step_; }
  const RunConfig& config() const { return config_; }
  const Enhancer& enhancer() const { return enhancer_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const FrozenGenDeg& gendeg() const { return gendeg_; }
  const StandInBackbone& backbone() const { return backbone_; }
  const std::vector<ViewPair>& holdout() const { return holdout_; }

 private:
  RunConfig config_;
  FrozenGenDeg gendeg_;
  StandInBackbone backbone_;
  std::unique_ptr<ParameterStore> store_;
  Enhancer enhancer_;
  std::vector<ImageRGB> scenes_;
  std::vector<ViewPair> holdout_;
  std::uint64_t step_ = 0;
};

// Held-out pairs: item k has kind k mod 6 and scene (k / 6) mod scenes.size().
std::vector<ViewPair> build_view_pairs(const std::vector<ImageRGB>& scenes, std::size_t count, std::size_t crop,
                                       double severity_min, double severity_max, std::uint64_t seed);

struct KindMetrics {
  std::string kind;
  std::size_t items = 0;
  double psnr_enhanced = 0.0, psnr_degraded = 0.0;
  double ssim_enhanced = 0.0, ssim_degraded = 0.0;
  double l1_enhanced = 0.0, l1_degraded = 0.0;
};

struct MetricsReport {
  std::vector<KindMetrics> kinds;  // the six degradation kinds, in label order
  KindMetrics average;             // mean of the per-kind entries
  KindMetrics clean;               // undegraded inputs; the baseline is the identity
  std::size_t parameter_count = 0;
  double seconds_per_item = 0.0;  // wall clock; kept out of the report files
};

// Decodes enhanced and degraded features through the backbone decoder and scores them
// against the clean crops. Items are processed in order and summed in that order.
MetricsReport evaluate(const Enhancer& enhancer, const FrozenGenDeg& gendeg, const StandInBackbone& backbone,
                       const std::vector<ViewPair>& pairs);
MetricsReport evaluate(const EnhancerTrainer& trainer);

// Deterministic renderings (no timing).
std::string report_text(const MetricsReport& report);
std::string report_json(const MetricsReport& report);

// One line per FEB application: label, mean, variance, then the class histogram.
void write_feature_stats(std::ostream& out, const std::vector<FebStats>& stats);

}  // namespace mvssm
