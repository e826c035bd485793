// SPDX-License-Identifier: Apache-2.0

#include "mvssm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mvssm/tensor.hpp"

namespace mvssm {
namespace {

void check_same_shape(const ImageRGB& a, const ImageRGB& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.empty())
    throw ShapeError("image metric on mismatched or empty images: " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
}

}  // namespace

double mean_squared_error(const ImageRGB& a, const ImageRGB& b) {
  check_same_shape(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.planar().size(); ++i) {
    const double d = a.planar()[i] - b.planar()[i];
    total += d * d;
  }
  return total / static_cast<double>(a.planar().size());
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

std::array<double, kSsimWindow * kSsimWindow> ssim_window() {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  const double centre = (kSsimWindow - 1) / 2.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - centre;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  std::array<double, kSsimWindow * kSsimWindow> w{};
  for (std::size_t y = 0; y < kSsimWindow; ++y)
    for (std::size_t x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x];
  return w;
}

std::vector<double> luma(const ImageRGB& image) {
  std::vector<double> y(image.pixel_count());
  const std::size_t n = image.pixel_count();
  const auto& p = image.planar();
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * p[i] + 0.587 * p[n + i] + 0.114 * p[2 * n + i];
  return y;
}

double ssim(const ImageRGB& a, const ImageRGB& b) {
  check_same_shape(a, b);
  if (a.height() < kSsimWindow || a.width() < kSsimWindow)
    throw std::invalid_argument("SSIM needs images of at least 11x11 pixels");
  const auto w = ssim_window();
  const auto ya = luma(a), yb = luma(b);
  const std::size_t width = a.width();
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t top = 0; top + kSsimWindow <= a.height(); ++top) {
    for (std::size_t left = 0; left + kSsimWindow <= width; ++left) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (std::size_t y = 0; y < kSsimWindow; ++y) {
        for (std::size_t x = 0; x < kSsimWindow; ++x) {
          const double wt = w[y * kSsimWindow + x];
          const double va = ya[(top + y) * width + left + x];
          const double vb = yb[(top + y) * width + left + x];
          mu_a += wt * va;
          mu_b += wt * vb;
          aa += wt * va * va;
          bb += wt * vb * vb;
          ab += wt * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace mvssm
