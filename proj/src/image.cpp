// SPDX-License-Identifier: Apache-2.0

#include "mvssm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "mvssm/rng.hpp"

namespace mvssm {

ImageRGB::ImageRGB(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), data_(3 * height * width, fill) {}

ImageRGB::ImageRGB(std::size_t height, std::size_t width, std::vector<double> planar)
    : height_(height), width_(width), data_(std::move(planar)) {
  if (data_.size() != 3 * height * width) throw std::invalid_argument("planar buffer size mismatch");
}

void ImageRGB::clip() {
  for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
}

double ImageRGB::mean() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
}

ImageRGB ImageRGB::crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const {
  if (top + h > height_ || left + w > width_) throw std::out_of_range("crop outside image");
  ImageRGB out(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = at(c, top + y, left + x);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const ImageRGB& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + 3 * image.pixel_count());
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
      }
  return bytes;
}

ImageRGB decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space_and_comments();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw ImageIoError("malformed PPM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageIoError("not a P6 PPM");
  pos = 2;
  const std::size_t w = read_int();
  const std::size_t h = read_int();
  const std::size_t maxval = read_int();
  if (maxval != 255) throw ImageIoError("only maxval 255 is supported");
  if (w == 0 || h == 0) throw ImageIoError("empty PPM");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageIoError("malformed PPM header");
  ++pos;
  if (bytes.size() - pos < 3 * w * h) throw ImageIoError("truncated PPM pixel data");
  ImageRGB image(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = bytes[pos++] / 255.0;
  return image;
}

void write_ppm(const std::filesystem::path& path, const ImageRGB& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("failed writing " + path.string());
}

ImageRGB read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const ImageIoError& e) {
    throw ImageIoError(path.string() + ": " + e.what());
  }
}

ImageRGB synthetic_scene(std::uint64_t seed, std::size_t height, std::size_t width) {
  SeededRng rng(seed);
  ImageRGB img(height, width);
  double top[3], bottom[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = rng.uniform(0.2, 0.8);
    bottom[c] = rng.uniform(0.2, 0.8);
  }
  const double tilt = rng.uniform(-0.5, 0.5);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double t = (static_cast<double>(y) + tilt * static_cast<double>(x)) / static_cast<double>(height);
      t = std::clamp(t, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - t) * top[c] + t * bottom[c];
    }

  const std::size_t shapes = 3 + rng.index(4);
  for (std::size_t s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cy = rng.uniform(0, static_cast<double>(height));
    const double cx = rng.uniform(0, static_cast<double>(width));
    const double ry = rng.uniform(0.08, 0.3) * static_cast<double>(height);
    const double rx = rng.uniform(0.08, 0.3) * static_cast<double>(width);
    double color[3];
    for (auto& v : color) v = rng.uniform(0.1, 0.9);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
        if (inside)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
  }

  const double freq = rng.uniform(0.2, 0.8);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  const double amp = rng.uniform(0.0, 0.05);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double wave = amp * std::sin(freq * static_cast<double>(x + y) + phase);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) += wave;
    }
  img.clip();
  return img;
}

}  // namespace mvssm
