// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace affnet {

/// 8-bit RGB raster, row-major, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  static Image filled(int width, int height, std::uint8_t value);
  std::uint8_t at(int x, int y, int channel) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel]; }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

/// Binary PPM (P6, maxval 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);

}  // namespace affnet
