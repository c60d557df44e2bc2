#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tunnelrec {

/// 8-bit raster with interleaved channels, row-major, top row first.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool empty() const { return data.empty(); }
};

/// Reads an 8-bit PNG. Palette, gray and alpha variants are expanded or
/// stripped so the result has `channels` channels (1 or 3). 16-bit input is
/// reduced to 8 bits.
Image read_png(const std::filesystem::path& path, int channels = 3);

/// Writes a 1- or 3-channel 8-bit PNG. Throws IoError on failure.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace tunnelrec
