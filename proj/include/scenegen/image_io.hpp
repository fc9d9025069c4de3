#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen {

// 8-bit interleaved image (1 = gray/class map, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// 8-bit RGB -> (1, 3, h, w) in [-1, 1]: v / 127.5 - 1.
Tensor normalize_image(const Image& image);
// (1, 3, h, w) or sample `index` of a batch -> 8-bit, clamped and rounded.
Image denormalize_image(const Tensor& t, int index = 0);

Image flip_image_horizontal(const Image& image);

}  // namespace scenegen
