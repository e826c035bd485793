// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthesis of the six degradation classes. Each recipe is a fixed
// function of (image, severity, rng stream); outputs are clipped to [0, 1].
//
//   dark            I' = clip(b I),                    b = 0.5 - 0.3 s
//   fog             I' = t I + (1 - t) 0.9,            t = 0.7 - 0.4 s
//   contrast        I' = clip((I - 0.5) c + 0.5),      c = 0.5 - 0.3 s
//   snow            round(5 + 45 s) discs, radius U[1, 3], blended to white, alpha 0.8
//   rain            round(10 + 90 s) streaks, angle U[-30, -10] deg from vertical,
//                   length U[6, 12] px, +0.4 brightness then clip
//   impulse-noise   each pixel replaced by 0 or 1 with p = 0.02 + 0.08 s

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvssm/image.hpp"
#include "mvssm/rng.hpp"

namespace mvssm {

enum class DegradationKind : int { kDark = 0, kFog = 1, kContrast = 2, kSnow = 3, kRain = 4, kImpulseNoise = 5 };

inline constexpr std::size_t kDegradationClasses = 6;
inline constexpr std::array<DegradationKind, kDegradationClasses> kAllDegradations = {
    DegradationKind::kDark, DegradationKind::kFog,  DegradationKind::kContrast,
    DegradationKind::kSnow, DegradationKind::kRain, DegradationKind::kImpulseNoise};

std::string_view degradation_name(DegradationKind kind);
DegradationKind degradation_from_name(std::string_view name);
DegradationKind degradation_from_label(int label);
inline int degradation_label(DegradationKind kind) { return static_cast<int>(kind); }

struct DegradationSpec {
  DegradationKind kind = DegradationKind::kDark;
  double severity = 0.0;
  std::uint64_t seed = 0;
};

ImageRGB apply_dark(const ImageRGB& img, double severity, SeededRng& rng);
ImageRGB apply_fog(const ImageRGB& img, double severity, SeededRng& rng);
ImageRGB apply_contrast(const ImageRGB& img, double severity, SeededRng& rng);
ImageRGB apply_snow(const ImageRGB& img, double severity, SeededRng& rng);
ImageRGB apply_rain(const ImageRGB& img, double severity, SeededRng& rng);
// `probability_override` replaces p (test hook; 0 gives the identity).
ImageRGB apply_impulse_noise(const ImageRGB& img, double severity, SeededRng& rng,
                             std::optional<double> probability_override = std::nullopt);

std::size_t snow_disc_count(double severity);
std::size_t rain_streak_count(double severity);
double impulse_probability(double severity);

// Integer pixels of a streak between two rounded endpoints (all-octant Bresenham).
std::vector<std::array<long, 2>> raster_line(long x0, long y0, long x1, long y1);

struct DegradedPair {
  ImageRGB degraded;
  int label = 0;
};

// Dispatches on spec.kind with a stream seeded from spec.seed.
DegradedPair synthesize_pair(const ImageRGB& clean, const DegradationSpec& spec);
ImageRGB degrade(const ImageRGB& clean, const DegradationSpec& spec);

}  // namespace mvssm
