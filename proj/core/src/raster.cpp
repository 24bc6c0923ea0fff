#include "utilise/raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "utilise/container.hpp"

namespace utilise {

RgbImage::RgbImage(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw std::invalid_argument("RgbImage: negative size");
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

void RgbImage::set(int x, int y, std::array<std::uint8_t, 3> rgb) {
  const std::size_t k = (static_cast<std::size_t>(y) * width + x) * 3;
  std::copy(rgb.begin(), rgb.end(), pixels.begin() + k);
}

std::array<std::uint8_t, 3> RgbImage::get(int x, int y) const {
  const std::size_t k = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[k], pixels[k + 1], pixels[k + 2]};
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_bytes(path, bytes);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  std::size_t pos = 0;
  const auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  if (token() != "255") throw FormatError(path.string() + ": unsupported PPM depth");
  ++pos;
  RgbImage img(w, h);
  if (bytes.size() - pos != img.pixels.size()) throw FormatError(path.string() + ": truncated PPM payload");
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.pixels.begin());
  return img;
}

std::array<std::uint8_t, 3> black_to_yellow(double value) {
  const double v = std::clamp(std::isnan(value) ? 0.0 : value, 0.0, 1.0);
  const auto c = static_cast<std::uint8_t>(std::lround(255.0 * v));
  return {c, c, 0};
}

RgbImage attention_panel(const AttentionVolume& attention, int head, int gap) {
  if (head < 0 || head >= attention.heads) throw std::invalid_argument("attention_panel: head out of range");
  const int T = attention.frames;
  const int h = attention.height;
  const int w = attention.width;
  RgbImage img(T * w + (T + 1) * gap, T * h + (T + 1) * gap, {255, 255, 255});
  for (int q = 0; q < T; ++q) {
    for (int k = 0; k < T; ++k) {
      const int ox = gap + k * (w + gap);
      const int oy = gap + q * (h + gap);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) img.set(ox + x, oy + y, black_to_yellow(attention.at(head, q, k, y, x)));
      }
    }
  }
  return img;
}

RgbImage bar_chart(std::span<const double> values, int bar_width, int height) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> kColors = {{
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  const int gap = bar_width / 2;
  const auto n = static_cast<int>(values.size());
  RgbImage img(n * (bar_width + gap) + gap, height, {255, 255, 255});
  double top = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) top = std::max(top, v);
  }
  for (int i = 0; i < n; ++i) {
    const double v = values[static_cast<std::size_t>(i)];
    if (!(std::isfinite(v) && v > 0.0 && top > 0.0)) continue;
    const int bar = static_cast<int>(std::lround((height - 1) * v / top));
    const int x0 = gap + i * (bar_width + gap);
    for (int y = height - bar; y < height; ++y) {
      for (int x = x0; x < x0 + bar_width; ++x) img.set(x, y, kColors[static_cast<std::size_t>(i) % kColors.size()]);
    }
  }
  return img;
}

}  // namespace utilise
