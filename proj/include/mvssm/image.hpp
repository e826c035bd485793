// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace mvssm {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Planar RGB image with values in [0, 1]; element (c, y, x) lives at
// c * height * width + y * width + x.
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(std::size_t height, std::size_t width, double fill = 0.0);
  ImageRGB(std::size_t height, std::size_t width, std::vector<double> planar);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }

  const std::vector<double>& planar() const { return data_; }
  std::vector<double>& planar() { return data_; }

  void clip();
  double mean() const;
  ImageRGB crop(std::size_t top, std::size_t left, std::size_t height, std::size_t width) const;

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

// Binary PPM (P6, maxval 255). Writing quantizes round(255 v); reading maps byte / 255.
void write_ppm(const std::filesystem::path& path, const ImageRGB& image);
ImageRGB read_ppm(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const ImageRGB& image);
ImageRGB decode_ppm(const std::vector<std::uint8_t>& bytes);

// Procedural clean scene: a colour gradient, a few flat shapes and a faint texture.
ImageRGB synthetic_scene(std::uint64_t seed, std::size_t height, std::size_t width);

}  // namespace mvssm
