// SPDX-License-Identifier: Apache-2.0

#include "mvssm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "mvssm/metrics.hpp"
#include "mvssm/ops.hpp"
#include "mvssm/optim.hpp"

namespace mvssm {
namespace {

// Purposes for mix_seed(seed, purpose).
enum Stream : std::uint64_t {
  kInitStream = 1,
  kTrainScenes = 2,
  kHoldoutScenes = 3,
  kTrainCorpus = 4,
  kHoldoutCorpus = 5,
  kBatchStream = 6,
  kNoiseStream = 7,
  kPairStream = 8,
};

std::uint64_t stream(std::uint64_t seed, Stream purpose) { return mix_seed(seed, purpose); }

std::vector<Parameter*> trainable(ParameterStore& store) {
  std::vector<Parameter*> out;
  for (Parameter* p : store.all())
    if (!p->frozen) out.push_back(p);
  return out;
}

double epoch_learning_rate(const RunConfig& c, std::uint64_t step) {
  return scheduled_learning_rate(c.learning_rate, step / c.steps_per_epoch(), c.lr_period);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

ImageRGB centre_crop(const ImageRGB& image, std::size_t size) {
  if (image.height() < size || image.width() < size)
    throw DataError("image of " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                    " is smaller than " + std::to_string(size) + "x" + std::to_string(size));
  return image.crop((image.height() - size) / 2, (image.width() - size) / 2, size, size);
}

DegradationSpec draw_spec(SeededRng& rng, DegradationKind kind, double smin, double smax) {
  DegradationSpec spec;
  spec.kind = kind;
  spec.severity = smin == smax ? smin : rng.uniform(smin, smax);
  spec.seed = rng.next_u64();
  return spec;
}

}  // namespace

std::vector<ImageRGB> load_clean_images(const std::string& dir, std::size_t size) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ppm images in " + dir);
  std::vector<ImageRGB> out;
  for (const auto& f : files) {
    try {
      out.push_back(centre_crop(read_ppm(f), size));
    } catch (const ImageIoError& e) {
      throw DataError(e.what());
    }
  }
  return out;
}

std::vector<ImageRGB> procedural_scenes(std::uint64_t seed, std::size_t count, std::size_t size) {
  std::vector<ImageRGB> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_scene(mix_seed(seed, i), size, size));
  return out;
}

std::vector<ImageRGB> training_scenes(const RunConfig& c, std::size_t per_scene) {
  if (!c.data_dir.empty()) return load_clean_images(c.data_dir, c.image_size);
  return procedural_scenes(stream(c.seed, kTrainScenes), ceil_div(c.train_images, per_scene), c.image_size);
}

std::vector<ImageRGB> holdout_scenes(const RunConfig& c, std::size_t per_scene) {
  if (!c.test_dir.empty()) return load_clean_images(c.test_dir, c.image_size);
  return procedural_scenes(stream(c.seed, kHoldoutScenes), ceil_div(c.holdout_images, per_scene), c.image_size);
}

std::vector<LabeledImage> build_corpus(const std::vector<ImageRGB>& scenes, std::size_t count, double severity_min,
                                       double severity_max, std::uint64_t seed) {
  if (scenes.empty()) throw DataError("empty dataset");
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng(mix_seed(seed, k));
    LabeledImage item;
    item.clean = scenes[(k / kDegradationClasses) % scenes.size()];
    item.spec = draw_spec(rng, kAllDegradations[k % kDegradationClasses], severity_min, severity_max);
    item.degraded = degrade(item.clean, item.spec);
    out.push_back(std::move(item));
  }
  return out;
}

void write_loss_header(std::ostream& out, bool gendeg) {
  out << (gendeg ? "# step L_rec L_con L_cls total\n" : "# step L1\n");
}

void write_loss_record(std::ostream& out, const LossRecord& r, bool gendeg) {
  std::ostringstream line;
  line << std::setprecision(17) << r.step;
  if (gendeg)
    line << ' ' << r.rec << ' ' << r.con << ' ' << r.cls << ' ' << r.total;
  else
    line << ' ' << r.total;
  out << line.str() << '\n';
}

// ---------------------------------------------------------------------------
// GenDeg

GenDegTrainer::GenDegTrainer(const RunConfig& config)
    : GenDegTrainer(config, training_scenes(config, kDegradationClasses),
                    holdout_scenes(config, kDegradationClasses)) {}

GenDegTrainer::GenDegTrainer(const RunConfig& config, const std::vector<ImageRGB>& train_scenes,
                             const std::vector<ImageRGB>& heldout_scenes)
    : config_(config), store_(std::make_unique<ParameterStore>()) {
  validate(config_);
  SeededRng init(stream(config_.seed, kInitStream));
  model_ = GenDeg::create(*store_, config_.gendeg(), init);
  corpus_ = build_corpus(train_scenes, config_.train_images, config_.severity_min, config_.severity_max,
                         stream(config_.seed, kTrainCorpus));
  holdout_ = build_corpus(heldout_scenes, config_.holdout_images, config_.severity_min, config_.severity_max,
                          stream(config_.seed, kHoldoutCorpus));
  for (std::size_t k = 0; k < corpus_.size(); ++k) by_class_[k % kDegradationClasses].push_back(k);
  const std::size_t per_class = config_.batch_size / kDegradationClasses;
  for (const auto& members : by_class_)
    if (members.size() < per_class)
      throw DataError("corpus has fewer than " + std::to_string(per_class) + " images of some class");
}

std::vector<std::size_t> GenDegTrainer::batch_indices(std::uint64_t step) const {
  SeededRng rng(mix_seed(stream(config_.seed, kBatchStream), step));
  const std::size_t per_class = config_.batch_size / kDegradationClasses;
  std::vector<std::size_t> out;
  for (const auto& members : by_class_) {
    std::vector<std::size_t> pool = members;
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

LossRecord GenDegTrainer::train_step() {
  const auto idx = batch_indices(step_);
  std::vector<ImageRGB> clean, degraded;
  std::vector<int> labels;
  for (auto k : idx) {
    clean.push_back(corpus_[k].clean);
    degraded.push_back(corpus_[k].degraded);
    labels.push_back(degradation_label(corpus_[k].spec.kind));
  }
  LossRecord r;
  r.step = step_;
  GradTape tape;
  {
    TapeScope scope(tape);
    const GenDegLosses losses = gendeg_losses(model_, images_to_batch(clean), images_to_batch(degraded), labels);
    r.rec = losses.rec.item();
    r.con = losses.con.item();
    r.cls = losses.cls.item();
    r.total = losses.total.item();
    tape.backward(losses.total);
  }
  adam_step(trainable(*store_), epoch_learning_rate(config_, step_));
  ++step_;
  return r;
}

std::vector<LossRecord> GenDegTrainer::train(std::uint64_t until_step, std::ostream* log) {
  until_step = std::min(until_step, config_.total_steps());
  std::vector<LossRecord> trace;
  while (step_ < until_step) {
    trace.push_back(train_step());
    if (log) write_loss_record(*log, trace.back(), true);
  }
  return trace;
}

void GenDegTrainer::resume(const Checkpoint& checkpoint) {
  restore(*store_, checkpoint);
  step_ = checkpoint.step;
}

Checkpoint GenDegTrainer::checkpoint() const { return capture(*store_, to_text(config_), step_); }

double GenDegTrainer::holdout_accuracy() const {
  NoGradScope no_grad;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 24;
  for (std::size_t begin = 0; begin < holdout_.size(); begin += kChunk) {
    const std::size_t end = std::min(holdout_.size(), begin + kChunk);
    std::vector<ImageRGB> images;
    for (std::size_t k = begin; k < end; ++k) images.push_back(holdout_[k].degraded);
    const auto predicted = row_argmax(model_.classify(model_.encode(images_to_batch(images))));
    for (std::size_t k = begin; k < end; ++k)
      if (static_cast<int>(predicted[k - begin]) == degradation_label(holdout_[k].spec.kind)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(holdout_.size());
}

// ---------------------------------------------------------------------------
// Frozen GenDeg

FrozenGenDeg::FrozenGenDeg(const Checkpoint& checkpoint) : store_(std::make_unique<ParameterStore>()) {
  try {
    config_ = parse_config(checkpoint.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("GenDeg checkpoint carries an invalid configuration: ") + e.what());
  }
  SeededRng init(stream(config_.seed, kInitStream));
  model_ = GenDeg::create(*store_, config_.gendeg(), init);
  restore(*store_, checkpoint);
  store_->freeze_all();
}

Tensor FrozenGenDeg::embed(const std::vector<ImageRGB>& images) const {
  NoGradScope no_grad;
  return model_.encode(images_to_batch(images));
}

// ---------------------------------------------------------------------------
// Enhancer

double crop_overlap(std::size_t crop, std::size_t top0, std::size_t left0, std::size_t top1, std::size_t left1) {
  const auto shared = [crop](std::size_t a, std::size_t b) {
    const std::size_t d = a > b ? a - b : b - a;
    return d >= crop ? 0.0 : static_cast<double>(crop - d);
  };
  return shared(top0, top1) * shared(left0, left1) / static_cast<double>(crop * crop);
}

ViewPair sample_view_pair(const ImageRGB& scene, std::size_t crop, const DegradationSpec& spec, SeededRng& rng) {
  if (scene.height() < crop || scene.width() < crop) throw DataError("scene smaller than the crop size");
  const std::size_t max_shift = crop / 4;
  const std::size_t top0 = rng.index(scene.height() - crop + 1);
  const std::size_t left0 = rng.index(scene.width() - crop + 1);
  auto shifted = [&](std::size_t origin, std::size_t limit) {
    const long lo = std::max<long>(0, static_cast<long>(origin) - static_cast<long>(max_shift));
    const long hi = std::min<long>(static_cast<long>(limit - crop), static_cast<long>(origin + max_shift));
    return static_cast<std::size_t>(lo + static_cast<long>(rng.index(static_cast<std::size_t>(hi - lo + 1))));
  };
  const std::size_t top1 = shifted(top0, scene.height());
  const std::size_t left1 = shifted(left0, scene.width());
  ViewPair p;
  p.spec = spec;
  p.clean[0] = scene.crop(top0, left0, crop, crop);
  p.clean[1] = scene.crop(top1, left1, crop, crop);
  for (int v = 0; v < 2; ++v) p.degraded[v] = degrade(p.clean[v], spec);
  return p;
}

std::vector<ViewPair> build_view_pairs(const std::vector<ImageRGB>& scenes, std::size_t count, std::size_t crop,
                                       double severity_min, double severity_max, std::uint64_t seed) {
  if (scenes.empty()) throw DataError("empty dataset");
  std::vector<ViewPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng(mix_seed(seed, k));
    const auto spec = draw_spec(rng, kAllDegradations[k % kDegradationClasses], severity_min, severity_max);
    out.push_back(sample_view_pair(scenes[(k / kDegradationClasses) % scenes.size()], crop, spec, rng));
  }
  return out;
}

EnhancerTrainer::EnhancerTrainer(const RunConfig& config, const Checkpoint& gendeg)
    : EnhancerTrainer(config, gendeg, training_scenes(config, 1), holdout_scenes(config, kDegradationClasses)) {}

EnhancerTrainer::EnhancerTrainer(const RunConfig& config, const Checkpoint& gendeg,
                                 const std::vector<ImageRGB>& train_scenes,
                                 const std::vector<ImageRGB>& heldout_scenes)
    : config_(config),
      gendeg_(gendeg),
      backbone_(config.backbone_patch, config.channels),
      store_(std::make_unique<ParameterStore>()),
      scenes_(train_scenes) {
  validate(config_);
  if (gendeg_.config().embed_dim != config_.embed_dim)
    throw ConfigError("embed_dim differs from the GenDeg checkpoint's (" +
                      std::to_string(gendeg_.config().embed_dim) + ")");
  if (config_.crop_size % gendeg_.config().patch_size != 0)
    throw ConfigError("crop_size must be a multiple of the GenDeg patch size");
  if (scenes_.empty()) throw DataError("empty dataset");
  SeededRng init(stream(config_.seed, kInitStream));
  enhancer_ = Enhancer::create(*store_, config_.enhancer(), init);
  holdout_ = build_view_pairs(heldout_scenes, config_.holdout_images, config_.crop_size, config_.severity_min,
                              config_.severity_max, stream(config_.seed, kHoldoutCorpus));
}

PreparedPair EnhancerTrainer::prepare(const ViewPair& pair) const {
  NoGradScope no_grad;
  const std::size_t c = backbone_.channels();
  const std::size_t h = config_.crop_size / backbone_.patch();
  auto features = [&](const std::array<ImageRGB, 2>& views) {
    return reshape(backbone_.encode(images_to_batch({views[0], views[1]})), {1, 2, c, h, h});
  };
  PreparedPair p;
  p.clean = features(pair.clean);
  p.degraded = features(pair.degraded);
  p.z = reshape(gendeg_.embed({pair.degraded[0], pair.degraded[1]}), {1, 2, config_.embed_dim});
  return p;
}

LossRecord EnhancerTrainer::train_step() {
  std::vector<Tensor> clean, degraded, z;
  for (std::size_t b = 0; b < config_.batch_size; ++b) {
    SeededRng rng(mix_seed(stream(config_.seed, kPairStream), step_ * config_.batch_size + b));
    const ImageRGB& scene = scenes_[rng.index(scenes_.size())];
    const auto kind = kAllDegradations[rng.index(kDegradationClasses)];
    const auto spec = draw_spec(rng, kind, config_.severity_min, config_.severity_max);
    const PreparedPair p = prepare(sample_view_pair(scene, config_.crop_size, spec, rng));
    clean.push_back(p.clean);
    degraded.push_back(p.degraded);
    z.push_back(p.z);
  }
  auto join = [](const std::vector<Tensor>& parts) { return parts.size() == 1 ? parts[0] : concat(parts, 0); };
  SeededRng noise(mix_seed(stream(config_.seed, kNoiseStream), step_));
  LossRecord r;
  r.step = step_;
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor out = enhancer_(join(degraded), join(z), &noise);
    Tensor loss = mean(abs(sub(out, join(clean))));
    r.total = r.rec = loss.item();
    tape.backward(loss);
  }
  adam_step(trainable(*store_), epoch_learning_rate(config_, step_));
  ++step_;
  return r;
}

std::vector<LossRecord> EnhancerTrainer::train(std::uint64_t until_step, std::ostream* log) {
  until_step = std::min(until_step, config_.total_steps());
  std::vector<LossRecord> trace;
  while (step_ < until_step) {
    trace.push_back(train_step());
    if (log) write_loss_record(*log, trace.back(), false);
  }
  return trace;
}

void EnhancerTrainer::resume(const Checkpoint& checkpoint) {
  restore(*store_, checkpoint);
  step_ = checkpoint.step;
}

Checkpoint EnhancerTrainer::checkpoint() const { return capture(*store_, to_text(config_), step_); }

double EnhancerTrainer::validation_loss() const {
  NoGradScope no_grad;
  double total = 0.0;
  for (const auto& pair : holdout_) {
    const PreparedPair p = prepare(pair);
    total += mean(abs(sub(enhancer_(p.degraded, p.z, nullptr), p.clean))).item();
  }
  return total / static_cast<double>(holdout_.size());
}

double EnhancerTrainer::baseline_loss() const {
  NoGradScope no_grad;
  double total = 0.0;
  for (const auto& pair : holdout_) {
    const PreparedPair p = prepare(pair);
    total += mean(abs(sub(p.degraded, p.clean))).item();
  }
  return total / static_cast<double>(holdout_.size());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct ItemScores {
  double psnr_enh, psnr_deg, ssim_enh, ssim_deg, l1_enh, l1_deg;
};

std::array<ImageRGB, 2> decode_views(const StandInBackbone& backbone, const Tensor& features) {
  const auto& s = features.shape();  // [1, 2, C, h, w]
  Tensor images = backbone.decode(reshape(features, {s[1], s[2], s[3], s[4]}));
  std::array<ImageRGB, 2> out{batch_item_to_image(images, 0), batch_item_to_image(images, 1)};
  for (auto& im : out) im.clip();
  return out;
}

ItemScores score(const Enhancer& enhancer, const FrozenGenDeg& gendeg, const StandInBackbone& backbone,
                 const std::array<ImageRGB, 2>& clean, const std::array<ImageRGB, 2>& degraded) {
  NoGradScope no_grad;
  const std::size_t c = backbone.channels();
  const std::size_t h = clean[0].height() / backbone.patch(), w = clean[0].width() / backbone.patch();
  auto features = [&](const std::array<ImageRGB, 2>& views) {
    return reshape(backbone.encode(images_to_batch({views[0], views[1]})), {1, 2, c, h, w});
  };
  const Tensor f_clean = features(clean);
  const Tensor f_deg = features(degraded);
  const Tensor z = reshape(gendeg.embed({degraded[0], degraded[1]}), {1, 2, gendeg.model().config().embed_dim});
  const Tensor f_enh = enhancer(f_deg, z, nullptr);
  const auto img_enh = decode_views(backbone, f_enh);
  ItemScores s{};
  for (int v = 0; v < 2; ++v) {
    s.psnr_enh += psnr(img_enh[v], clean[v]) / 2.0;
    s.psnr_deg += psnr(degraded[v], clean[v]) / 2.0;
    s.ssim_enh += ssim(img_enh[v], clean[v]) / 2.0;
    s.ssim_deg += ssim(degraded[v], clean[v]) / 2.0;
  }
  s.l1_enh = mean(abs(sub(f_enh, f_clean))).item();
  s.l1_deg = mean(abs(sub(f_deg, f_clean))).item();
  return s;
}

void accumulate(KindMetrics& m, const ItemScores& s) {
  ++m.items;
  m.psnr_enhanced += s.psnr_enh;
  m.psnr_degraded += s.psnr_deg;
  m.ssim_enhanced += s.ssim_enh;
  m.ssim_degraded += s.ssim_deg;
  m.l1_enhanced += s.l1_enh;
  m.l1_degraded += s.l1_deg;
}

void finish(KindMetrics& m) {
  if (m.items == 0) return;
  const double n = static_cast<double>(m.items);
  m.psnr_enhanced /= n;
  m.psnr_degraded /= n;
  m.ssim_enhanced /= n;
  m.ssim_degraded /= n;
  m.l1_enhanced /= n;
  m.l1_degraded /= n;
}

nlohmann::json to_json(const KindMetrics& m) {
  return {{"kind", m.kind},
          {"items", m.items},
          {"psnr_enhanced", m.psnr_enhanced},
          {"psnr_degraded", m.psnr_degraded},
          {"ssim_enhanced", m.ssim_enhanced},
          {"ssim_degraded", m.ssim_degraded},
          {"feature_l1_enhanced", m.l1_enhanced},
          {"feature_l1_degraded", m.l1_degraded}};
}

}  // namespace

MetricsReport evaluate(const Enhancer& enhancer, const FrozenGenDeg& gendeg, const StandInBackbone& backbone,
                       const std::vector<ViewPair>& pairs) {
  if (pairs.empty()) throw DataError("empty evaluation set");
  MetricsReport report;
  report.kinds.resize(kDegradationClasses);
  for (auto kind : kAllDegradations) report.kinds[degradation_label(kind)].kind = degradation_name(kind);
  report.clean.kind = "clean";
  report.average.kind = "average";
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& pair : pairs) {
    accumulate(report.kinds[degradation_label(pair.spec.kind)],
               score(enhancer, gendeg, backbone, pair.clean, pair.degraded));
    accumulate(report.clean, score(enhancer, gendeg, backbone, pair.clean, pair.clean));
  }
  const auto t1 = std::chrono::steady_clock::now();
  for (auto& k : report.kinds) finish(k);
  finish(report.clean);
  std::size_t present = 0;
  for (const auto& k : report.kinds) {
    if (k.items == 0) continue;
    ++present;
    report.average.items += k.items;
    report.average.psnr_enhanced += k.psnr_enhanced;
    report.average.psnr_degraded += k.psnr_degraded;
    report.average.ssim_enhanced += k.ssim_enhanced;
    report.average.ssim_degraded += k.ssim_degraded;
    report.average.l1_enhanced += k.l1_enhanced;
    report.average.l1_degraded += k.l1_degraded;
  }
  const double n = static_cast<double>(present);
  report.average.psnr_enhanced /= n;
  report.average.psnr_degraded /= n;
  report.average.ssim_enhanced /= n;
  report.average.ssim_degraded /= n;
  report.average.l1_enhanced /= n;
  report.average.l1_degraded /= n;
  report.seconds_per_item = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(2 * pairs.size());
  return report;
}

MetricsReport evaluate(const EnhancerTrainer& trainer) {
  MetricsReport r = evaluate(trainer.enhancer(), trainer.gendeg(), trainer.backbone(), trainer.holdout());
  r.parameter_count = trainer.store().scalar_count();
  return r;
}

std::string report_text(const MetricsReport& report) {
  std::ostringstream out;
  out << std::fixed;
  out << "kind            items  PSNR-enh  PSNR-deg  SSIM-enh  SSIM-deg  L1-enh    L1-deg\n";
  auto row = [&](const KindMetrics& m) {
    out << std::left << std::setw(15) << m.kind << std::right << std::setw(6) << m.items << std::setprecision(3)
        << std::setw(10) << m.psnr_enhanced << std::setw(10) << m.psnr_degraded << std::setprecision(4)
        << std::setw(10) << m.ssim_enhanced << std::setw(10) << m.ssim_degraded << std::setprecision(5)
        << std::setw(10) << m.l1_enhanced << std::setw(10) << m.l1_degraded << '\n';
  };
  for (const auto& k : report.kinds) row(k);
  row(report.average);
  row(report.clean);
  out << "parameters " << report.parameter_count << '\n';
  return out.str();
}

std::string report_json(const MetricsReport& report) {
  nlohmann::json j;
  j["kinds"] = nlohmann::json::array();
  for (const auto& k : report.kinds) j["kinds"].push_back(to_json(k));
  j["average"] = to_json(report.average);
  j["clean"] = to_json(report.clean);
  j["parameter_count"] = report.parameter_count;
  return j.dump(2) + "\n";
}

void write_feature_stats(std::ostream& out, const std::vector<FebStats>& stats) {
  out << "# block mean variance class-histogram\n";
  std::ostringstream line;
  for (const auto& s : stats) {
    line.str("");
    line << std::setprecision(17) << s.label << ' ' << s.mean << ' ' << s.variance;
    for (auto c : s.class_histogram) line << ' ' << c;
    out << line.str() << '\n';
  }
}

}  // namespace mvssm
