#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "utilise/model.hpp"

namespace utilise {

// 8-bit RGB raster, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});
  void set(int x, int y, std::array<std::uint8_t, 3> rgb);
  std::array<std::uint8_t, 3> get(int x, int y) const;
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Binary PPM (P6).
void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

// Linear black -> yellow ramp; `value` is clamped to [0, 1].
std::array<std::uint8_t, 3> black_to_yellow(double value);

// Grid of attention maps for one head: row = query frame, column = key frame,
// cells separated by `gap` white pixels. Scores map to colors on [0, 1].
RgbImage attention_panel(const AttentionVolume& attention, int head, int gap = 1);

// Vertical bars scaled to the largest value, one color per bar.
RgbImage bar_chart(std::span<const double> values, int bar_width = 24, int height = 160);

}  // namespace utilise
