// SPDX-License-Identifier: Apache-2.0
//
// Image fidelity metrics on [0, 1] RGB images.
//
//   PSNR  10 log10(1 / MSE) over all channels; identical images give kPsnrCap.
//   SSIM  on luma Y = 0.299 R + 0.587 G + 0.114 B, 11x11 Gaussian window (sigma 1.5),
//         K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over every position where the
//         window fits inside the image (no padding).

#pragma once

#include <array>
#include <vector>

#include "mvssm/image.hpp"

namespace mvssm {

inline constexpr double kPsnrCap = 99.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

double mean_squared_error(const ImageRGB& a, const ImageRGB& b);
double psnr(const ImageRGB& a, const ImageRGB& b);

// Normalised separable window, row-major 11x11.
std::array<double, kSsimWindow * kSsimWindow> ssim_window();
std::vector<double> luma(const ImageRGB& image);
double ssim(const ImageRGB& a, const ImageRGB& b);

}  // namespace mvssm
