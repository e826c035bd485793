// SPDX-License-Identifier: Apache-2.0

#include "mvssm/degradations.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvssm {

namespace {

void check_severity(double severity) {
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw std::invalid_argument("severity must lie in [0, 1], got " + std::to_string(severity));
  }
}

template <class F>
ImageRGB pointwise(const ImageRGB& img, F f) {
  ImageRGB out = img;
  for (auto& v : out.planar()) v = f(v);
  out.clip();
  return out;
}

constexpr std::array<std::string_view, kDegradationClasses> kNames = {
    "dark", "fog", "contrast", "snow", "rain", "impulse-noise"};

}  // namespace

std::string_view degradation_name(DegradationKind kind) { return kNames.at(static_cast<std::size_t>(kind)); }

DegradationKind degradation_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<DegradationKind>(i);
  throw std::invalid_argument("unknown degradation kind: " + std::string(name));
}

DegradationKind degradation_from_label(int label) {
  if (label < 0 || label >= static_cast<int>(kDegradationClasses)) {
    throw std::invalid_argument("degradation label out of range: " + std::to_string(label));
  }
  return static_cast<DegradationKind>(label);
}

std::size_t snow_disc_count(double severity) { return static_cast<std::size_t>(std::lround(5.0 + 45.0 * severity)); }
std::size_t rain_streak_count(double severity) { return static_cast<std::size_t>(std::lround(10.0 + 90.0 * severity)); }
double impulse_probability(double severity) { return 0.02 + 0.08 * severity; }

ImageRGB apply_dark(const ImageRGB& img, double severity, SeededRng&) {
  check_severity(severity);
  const double b = 0.5 - 0.3 * severity;
  return pointwise(img, [b](double v) { return b * v; });
}

ImageRGB apply_fog(const ImageRGB& img, double severity, SeededRng&) {
  check_severity(severity);
  constexpr double kAtmosphere = 0.9;
  const double t = 0.7 - 0.4 * severity;
  return pointwise(img, [t](double v) { return t * v + (1.0 - t) * kAtmosphere; });
}

ImageRGB apply_contrast(const ImageRGB& img, double severity, SeededRng&) {
  check_severity(severity);
  const double c = 0.5 - 0.3 * severity;
  return pointwise(img, [c](double v) { return (v - 0.5) * c + 0.5; });
}

ImageRGB apply_snow(const ImageRGB& img, double severity, SeededRng& rng) {
  check_severity(severity);
  if (img.height() < 4 || img.width() < 4) throw std::invalid_argument("snow needs an image of at least 4x4");
  constexpr double kAlpha = 0.8;
  ImageRGB out = img;
  const std::size_t discs = snow_disc_count(severity);
  const auto h = static_cast<double>(img.height());
  const auto w = static_cast<double>(img.width());
  for (std::size_t d = 0; d < discs; ++d) {
    const double cx = rng.uniform(0.0, w - 1.0);
    const double cy = rng.uniform(0.0, h - 1.0);
    const double r = rng.uniform(1.0, 3.0);
    const long y_lo = std::max(0L, static_cast<long>(std::floor(cy - r)));
    const long y_hi = std::min(static_cast<long>(img.height()) - 1, static_cast<long>(std::ceil(cy + r)));
    const long x_lo = std::max(0L, static_cast<long>(std::floor(cx - r)));
    const long x_hi = std::min(static_cast<long>(img.width()) - 1, static_cast<long>(std::ceil(cx + r)));
    for (long y = y_lo; y <= y_hi; ++y)
      for (long x = x_lo; x <= x_hi; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        if (dx * dx + dy * dy > r * r) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
          v = (1.0 - kAlpha) * v + kAlpha;
        }
      }
  }
  out.clip();
  return out;
}

std::vector<std::array<long, 2>> raster_line(long x0, long y0, long x1, long y1) {
  std::vector<std::array<long, 2>> pixels;
  const long dx = std::labs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const long dy = -std::labs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    pixels.push_back({x0, y0});
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return pixels;
}

ImageRGB apply_rain(const ImageRGB& img, double severity, SeededRng& rng) {
  check_severity(severity);
  constexpr double kBrightness = 0.4;
  ImageRGB out = img;
  const std::size_t streaks = rain_streak_count(severity);
  const auto h = static_cast<double>(img.height());
  const auto w = static_cast<double>(img.width());
  for (std::size_t s = 0; s < streaks; ++s) {
    const double x0 = rng.uniform(0.0, w - 1.0);
    const double y0 = rng.uniform(0.0, h - 1.0);
    const double angle = rng.uniform(-30.0, -10.0) * std::numbers::pi / 180.0;
    const double length = rng.uniform(6.0, 12.0);
    const double x1 = x0 + length * std::sin(angle);
    const double y1 = y0 + length * std::cos(angle);
    for (const auto& [x, y] : raster_line(std::lround(x0), std::lround(y0), std::lround(x1), std::lround(y1))) {
      if (x < 0 || y < 0 || x >= static_cast<long>(img.width()) || y >= static_cast<long>(img.height())) continue;
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) += kBrightness;
    }
  }
  out.clip();
  return out;
}

ImageRGB apply_impulse_noise(const ImageRGB& img, double severity, SeededRng& rng,
                             std::optional<double> probability_override) {
  check_severity(severity);
  const double p = probability_override.value_or(impulse_probability(severity));
  ImageRGB out = img;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      if (rng.uniform() >= p) continue;
      const double v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = v;
    }
  return out;
}

ImageRGB degrade(const ImageRGB& clean, const DegradationSpec& spec) {
  SeededRng rng(spec.seed);
  switch (spec.kind) {
    case DegradationKind::kDark: return apply_dark(clean, spec.severity, rng);
    case DegradationKind::kFog: return apply_fog(clean, spec.severity, rng);
    case DegradationKind::kContrast: return apply_contrast(clean, spec.severity, rng);
    case DegradationKind::kSnow: return apply_snow(clean, spec.severity, rng);
    case DegradationKind::kRain: return apply_rain(clean, spec.severity, rng);
    case DegradationKind::kImpulseNoise: return apply_impulse_noise(clean, spec.severity, rng);
  }
  throw std::invalid_argument("unknown degradation kind");
}

DegradedPair synthesize_pair(const ImageRGB& clean, const DegradationSpec& spec) {
  return {degrade(clean, spec), degradation_label(spec.kind)};
}

}  // namespace mvssm
