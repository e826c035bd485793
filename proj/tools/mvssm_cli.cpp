// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit status: 0 success, 1 usage or configuration error,
// 2 data error (unreadable input, bad checkpoint, empty dataset).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvssm/bench.hpp"
#include "mvssm/config.hpp"
#include "mvssm/degradations.hpp"
#include "mvssm/metrics.hpp"
#include "mvssm/ops.hpp"
#include "mvssm/training.hpp"

namespace fs = std::filesystem;
using namespace mvssm;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;

  // Training commands pin the stage before validation.
  RunConfig load(std::optional<Stage> stage = std::nullopt) const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (stage) c.stage = *stage;
    if (seed) c.seed = *seed;
    if (!out.empty()) c.out_dir = out;
    validate(c);
    return c;
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "run configuration (key = value lines)");
  app->add_option("--seed", common.seed, "overrides the configured seed");
  app->add_option("--out", common.out, "output directory (overrides out_dir)");
}

fs::path out_dir(const RunConfig& c) {
  fs::path dir = c.out_dir.empty() ? fs::path(".") : fs::path(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<fs::path> ppm_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ppm images in " + dir);
  return files;
}

Checkpoint require_checkpoint(const std::string& path, const char* what) {
  if (path.empty()) throw DataError(std::string("no ") + what + " checkpoint given");
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }
}

int run_degrade(const Common& common, const std::string& input) {
  const RunConfig c = common.load();
  const std::string src = input.empty() ? c.data_dir : input;
  if (src.empty()) throw ConfigError("degrade needs data_dir in the config or --input");
  const auto files = ppm_files(src);
  const fs::path dir = out_dir(c);
  std::ofstream labels(dir / "labels.tsv");
  for (std::size_t i = 0; i < files.size(); ++i) {
    SeededRng rng(mix_seed(c.seed, i));
    DegradationSpec spec;
    spec.kind = degradation_from_label(static_cast<int>(rng.index(kDegradationClasses)));
    spec.severity = rng.uniform(c.severity_min, c.severity_max);
    spec.seed = rng.next_u64();
    ImageRGB clean;
    try {
      clean = read_ppm(files[i]);
    } catch (const ImageIoError& e) {
      throw DataError(e.what());
    }
    write_ppm(dir / files[i].filename(), degrade(clean, spec));
    std::ostringstream line;
    line << std::setprecision(17) << files[i].filename().string() << '\t' << degradation_label(spec.kind) << '\t'
         << spec.severity << '\n';
    labels << line.str();
  }
  std::cout << "degraded " << files.size() << " images into " << dir.string() << "\n";
  return 0;
}

int run_train_gendeg(const Common& common, const std::string& resume) {
  const RunConfig c = common.load(Stage::kGenDeg);
  GenDegTrainer trainer(c);
  if (!resume.empty()) trainer.resume(require_checkpoint(resume, "resume"));
  const fs::path dir = out_dir(c);
  std::ofstream log(dir / "gendeg_loss.txt", resume.empty() ? std::ios::trunc : std::ios::app);
  if (resume.empty()) write_loss_header(log, true);
  trainer.train(c.total_steps(), &log);
  save_checkpoint(dir / "gendeg.ckpt", trainer.checkpoint());
  std::cout << "steps " << trainer.step() << ", held-out accuracy " << trainer.holdout_accuracy() << "\n";
  return 0;
}

int run_train_enhancer(const Common& common, const std::string& gendeg_path, const std::string& resume) {
  RunConfig c = common.load(Stage::kEnhancer);
  if (!gendeg_path.empty()) c.gendeg_checkpoint = gendeg_path;
  EnhancerTrainer trainer(c, require_checkpoint(c.gendeg_checkpoint, "GenDeg"));
  if (!resume.empty()) trainer.resume(require_checkpoint(resume, "resume"));
  const fs::path dir = out_dir(c);
  std::ofstream log(dir / "enhancer_loss.txt", resume.empty() ? std::ios::trunc : std::ios::app);
  if (resume.empty()) write_loss_header(log, false);
  trainer.train(c.total_steps(), &log);
  save_checkpoint(dir / "enhancer.ckpt", trainer.checkpoint());
  std::cout << "steps " << trainer.step() << ", held-out feature L1 " << trainer.validation_loss()
            << " (degraded baseline " << trainer.baseline_loss() << ")\n";
  return 0;
}

// Rebuilds a trained enhancer. Architecture and init come from the checkpoint's own
// configuration; evaluation data fields come from `eval_config`.
EnhancerTrainer load_enhancer(const RunConfig& eval_config) {
  const Checkpoint enhancer = require_checkpoint(eval_config.enhancer_checkpoint, "enhancer");
  RunConfig c;
  try {
    c = parse_config(enhancer.config_text);
  } catch (const ConfigError& e) {
    throw DataError(std::string("enhancer checkpoint carries an invalid configuration: ") + e.what());
  }
  c.test_dir = eval_config.test_dir;
  c.holdout_images = eval_config.holdout_images;
  c.severity_min = eval_config.severity_min;
  c.severity_max = eval_config.severity_max;
  c.data_dir.clear();
  c.train_images = 1;
  const std::string gendeg = eval_config.gendeg_checkpoint.empty() ? c.gendeg_checkpoint : eval_config.gendeg_checkpoint;
  EnhancerTrainer trainer(c, require_checkpoint(gendeg, "GenDeg"));
  try {
    trainer.resume(enhancer);
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }
  return trainer;
}

int run_enhance(const Common& common, const std::string& input, const std::string& dump_path) {
  const RunConfig c = common.load();
  if (input.empty()) throw ConfigError("enhance needs --input <dir>");
  const EnhancerTrainer trainer = load_enhancer(c);
  const auto& backbone = trainer.backbone();
  const std::size_t unit = std::lcm(2 * backbone.patch(), trainer.gendeg().config().patch_size);
  const fs::path dir = out_dir(c);
  std::ofstream dump;
  if (!dump_path.empty()) dump.open(dump_path);
  for (const auto& file : ppm_files(input)) {
    ImageRGB image;
    try {
      image = read_ppm(file);
    } catch (const ImageIoError& e) {
      throw DataError(e.what());
    }
    // Largest centred crop whose sides are multiples of both patch grids.
    const std::size_t h = image.height() / unit * unit, w = image.width() / unit * unit;
    if (h == 0 || w == 0) throw DataError(file.string() + " is smaller than " + std::to_string(unit) + " pixels");
    image = image.crop((image.height() - h) / 2, (image.width() - w) / 2, h, w);
    NoGradScope no_grad;
    const Tensor features = backbone.encode(images_to_batch({image}));
    const Tensor z = trainer.gendeg().embed({image});
    std::vector<FebStats> stats;
    const Tensor enhanced = trainer.enhancer()(
        reshape(features, {1, 1, backbone.channels(), h / backbone.patch(), w / backbone.patch()}), z, nullptr,
        dump_path.empty() ? nullptr : &stats);
    ImageRGB out = batch_item_to_image(
        backbone.decode(reshape(enhanced, {1, backbone.channels(), h / backbone.patch(), w / backbone.patch()})), 0);
    out.clip();
    write_ppm(dir / file.filename(), out);
    if (dump) {
      dump << "# image " << file.filename().string() << '\n';
      write_feature_stats(dump, stats);
    }
  }
  return 0;
}

int run_eval(const Common& common) {
  const RunConfig c = common.load();
  const EnhancerTrainer trainer = load_enhancer(c);
  const MetricsReport report = evaluate(trainer);
  const fs::path dir = out_dir(c);
  std::ofstream(dir / "report.txt") << report_text(report);
  std::ofstream(dir / "report.json") << report_json(report);
  std::cout << report_text(report) << "seconds per item " << report.seconds_per_item << "\n";
  return 0;
}

int run_bench(const ScanBenchOptions& options) {
  const auto rows = bench_scan(options);
  write_bench_table(std::cout, rows);
  bool ok = true;
  for (const auto& r : rows)
    if (r.length >= 4096 && r.state_dim == 16 && r.parallel_slower()) ok = false;
  std::cout << (ok ? "parallel throughput >= sequential at length >= 4096\n"
                   : "FLAG: parallel scan slower than sequential at length >= 4096 on this machine\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view selective-scan feature enhancement toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string input, resume, gendeg_path, dump_path;
  ScanBenchOptions bench;

  auto* degrade_cmd = app.add_subcommand("degrade", "degrade clean PPMs, writing images and labels.tsv");
  add_common(degrade_cmd, common);
  degrade_cmd->add_option("--input", input, "clean image directory (default: data_dir)");

  auto* gendeg_cmd = app.add_subcommand("train-gendeg", "train the degradation encoder");
  add_common(gendeg_cmd, common);
  gendeg_cmd->add_option("--resume", resume, "continue from a checkpoint");

  auto* enhancer_cmd = app.add_subcommand("train-enhancer", "train the feature enhancer against a frozen GenDeg");
  add_common(enhancer_cmd, common);
  enhancer_cmd->add_option("--gendeg", gendeg_path, "GenDeg checkpoint (default: gendeg_checkpoint)");
  enhancer_cmd->add_option("--resume", resume, "continue from a checkpoint");

  auto* enhance_cmd = app.add_subcommand("enhance", "enhance single images through the stand-in backbone");
  add_common(enhance_cmd, common);
  enhance_cmd->add_option("--input", input, "directory of PPM images")->required();
  enhance_cmd->add_option("--dump-features", dump_path, "write per-block token statistics here");

  auto* eval_cmd = app.add_subcommand("eval", "score a trained enhancer on held-out pairs");
  add_common(eval_cmd, common);

  auto* bench_cmd = app.add_subcommand("bench-scan", "time sequential against parallel scans");
  bench_cmd->add_option("--lengths", bench.lengths, "sequence lengths")->delimiter(',');
  bench_cmd->add_option("--state-dim", bench.state_dim, "state dimension");
  bench_cmd->add_option("--channels", bench.channels, "channels (lanes = channels * state-dim)");
  bench_cmd->add_option("--repeats", bench.repeats, "best-of repeats");
  bench_cmd->add_option("--threads", bench.threads, "parallel workers (0 = all cores)");

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsageError;
  }
  if (argv[1][0] != '-') {
    const auto names = app.get_subcommands([](const CLI::App*) { return true; });
    const bool known = std::any_of(names.begin(), names.end(), [&](const CLI::App* s) { return s->get_name() == argv[1]; });
    if (!known) {
      std::cerr << "unknown subcommand '" << argv[1] << "'\n" << app.help();
      return kUsageError;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kUsageError;
  }

  try {
    if (degrade_cmd->parsed()) return run_degrade(common, input);
    if (gendeg_cmd->parsed()) return run_train_gendeg(common, resume);
    if (enhancer_cmd->parsed()) return run_train_enhancer(common, gendeg_path, resume);
    if (enhance_cmd->parsed()) return run_enhance(common, input, dump_path);
    if (eval_cmd->parsed()) return run_eval(common);
    if (bench_cmd->parsed()) return run_bench(bench);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsageError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ImageIoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}
