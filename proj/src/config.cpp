// SPDX-License-Identifier: Apache-2.0

#include "mvssm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "mvssm/degradations.hpp"

namespace mvssm {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

std::string render(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::string_view key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Field number_field(std::string_view key, T RunConfig::*member) {
  return {key,
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return render(c.*member);
            else
              return std::to_string(c.*member);
          },
          [member, key](RunConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); }};
}

Field text_field(std::string_view key, std::string RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

Field switch_field(std::string_view key, bool AblationSwitches::*member) {
  return {key, [member](const RunConfig& c) { return std::string(c.ablation.*member ? "true" : "false"); },
          [member, key](RunConfig& c, std::string_view v) { c.ablation.*member = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"stage", [](const RunConfig& c) { return std::string(stage_name(c.stage)); },
       [](RunConfig& c, std::string_view v) {
         if (v == "gendeg")
           c.stage = Stage::kGenDeg;
         else if (v == "enhancer")
           c.stage = Stage::kEnhancer;
         else
           throw ConfigError("stage must be gendeg or enhancer, got '" + std::string(v) + "'");
       }},
      number_field("seed", &RunConfig::seed),
      number_field("image_size", &RunConfig::image_size),
      number_field("crop_size", &RunConfig::crop_size),
      number_field("train_images", &RunConfig::train_images),
      number_field("holdout_images", &RunConfig::holdout_images),
      number_field("severity_min", &RunConfig::severity_min),
      number_field("severity_max", &RunConfig::severity_max),
      text_field("data_dir", &RunConfig::data_dir),
      text_field("test_dir", &RunConfig::test_dir),
      text_field("out_dir", &RunConfig::out_dir),
      text_field("gendeg_checkpoint", &RunConfig::gendeg_checkpoint),
      text_field("enhancer_checkpoint", &RunConfig::enhancer_checkpoint),
      number_field("patch_size", &RunConfig::patch_size),
      number_field("backbone_patch", &RunConfig::backbone_patch),
      number_field("channels", &RunConfig::channels),
      number_field("state_dim", &RunConfig::state_dim),
      number_field("classes", &RunConfig::classes),
      number_field("d_inner", &RunConfig::d_inner),
      number_field("embed_dim", &RunConfig::embed_dim),
      number_field("blocks", &RunConfig::blocks),
      number_field("gumbel_temperature", &RunConfig::gumbel_temperature),
      switch_field("degradation_injection", &AblationSwitches::degradation),
      switch_field("semantic_reorder", &AblationSwitches::semantic_reorder),
      switch_field("multi_view", &AblationSwitches::multi_view),
      switch_field("cross_state", &AblationSwitches::cross_state),
      switch_field("cross_offset", &AblationSwitches::cross_offset),
      number_field("batch_size", &RunConfig::batch_size),
      number_field("epochs", &RunConfig::epochs),
      number_field("learning_rate", &RunConfig::learning_rate),
      number_field("lr_period", &RunConfig::lr_period),
      number_field("tau", &RunConfig::tau),
      number_field("l1_weight", &RunConfig::l1_weight),
      number_field("rec_weight", &RunConfig::rec_weight),
      number_field("con_weight", &RunConfig::con_weight),
      number_field("cls_weight", &RunConfig::cls_weight),
  };
  return table;
}

}  // namespace

std::string_view stage_name(Stage stage) { return stage == Stage::kGenDeg ? "gendeg" : "enhancer"; }

std::uint64_t RunConfig::steps_per_epoch() const {
  return (train_images + batch_size - 1) / batch_size;
}

GenDegConfig RunConfig::gendeg() const {
  GenDegConfig g;
  g.patch = patch_size;
  g.width = channels;
  g.hidden = d_inner;
  g.embed_dim = embed_dim;
  g.temperature = tau;
  g.l1_weight = l1_weight;
  g.rec_weight = rec_weight;
  g.con_weight = con_weight;
  g.cls_weight = cls_weight;
  return g;
}

EnhancerConfig RunConfig::enhancer() const {
  EnhancerConfig e;
  e.feb.channels = channels;
  e.feb.state_dim = state_dim;
  e.feb.classes = classes;
  e.feb.d_inner = d_inner;
  e.feb.mlp_hidden = 2 * channels;
  e.feb.z_dim = embed_dim;
  e.feb.head_hidden = channels;
  e.feb.temperature = gumbel_temperature;
  e.blocks_fine = e.blocks_coarse = e.blocks_decode = blocks;
  e.ablation = ablation;
  return e;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    it->set(config, value);
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(config);
    out += '\n';
  }
  return out;
}

void validate(const RunConfig& c) {
  auto positive = [](std::string_view key, double v) {
    if (!(v > 0.0)) throw ConfigError(std::string(key) + " must be positive");
  };
  positive("image_size", static_cast<double>(c.image_size));
  positive("crop_size", static_cast<double>(c.crop_size));
  positive("train_images", static_cast<double>(c.train_images));
  positive("holdout_images", static_cast<double>(c.holdout_images));
  positive("severity_min", c.severity_min);
  positive("severity_max", c.severity_max);
  positive("patch_size", static_cast<double>(c.patch_size));
  positive("backbone_patch", static_cast<double>(c.backbone_patch));
  positive("channels", static_cast<double>(c.channels));
  positive("state_dim", static_cast<double>(c.state_dim));
  positive("classes", static_cast<double>(c.classes));
  positive("d_inner", static_cast<double>(c.d_inner));
  positive("embed_dim", static_cast<double>(c.embed_dim));
  positive("blocks", static_cast<double>(c.blocks));
  positive("gumbel_temperature", c.gumbel_temperature);
  positive("batch_size", static_cast<double>(c.batch_size));
  positive("epochs", static_cast<double>(c.epochs));
  positive("learning_rate", c.learning_rate);
  positive("lr_period", static_cast<double>(c.lr_period));
  positive("tau", c.tau);
  positive("l1_weight", c.l1_weight);
  positive("rec_weight", c.rec_weight);
  positive("con_weight", c.con_weight);
  positive("cls_weight", c.cls_weight);
  if (c.severity_min > c.severity_max || c.severity_max > 1.0)
    throw ConfigError("severity range must satisfy 0 < severity_min <= severity_max <= 1");
  if (c.image_size % c.patch_size != 0) throw ConfigError("image_size must be a multiple of patch_size");
  if (c.crop_size > c.image_size) throw ConfigError("crop_size exceeds image_size");
  if (c.crop_size % (2 * c.backbone_patch) != 0)
    throw ConfigError("crop_size must be a multiple of 2 * backbone_patch");
  if (c.crop_size % c.patch_size != 0) throw ConfigError("crop_size must be a multiple of patch_size");
  if (c.stage == Stage::kGenDeg && (c.batch_size % kDegradationClasses != 0))
    throw ConfigError("gendeg batch_size must be a multiple of 6 (two or more images per class)");
  if (c.stage == Stage::kGenDeg && c.batch_size < 2 * kDegradationClasses)
    throw ConfigError("gendeg batch_size must hold at least two images per class");
  if (c.stage == Stage::kEnhancer && c.channels < 3 * c.backbone_patch * c.backbone_patch)
    throw ConfigError("channels must be at least 3 * backbone_patch^2 for the stand-in backbone");
}

}  // namespace mvssm
