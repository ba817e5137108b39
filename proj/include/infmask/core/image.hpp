#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "infmask/core/types.hpp"

namespace infmask {

// Interleaved HWC RGB image, float values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return pixels.size(); }

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const Image& o) const {
    return height == o.height && width == o.width && pixels == o.pixels;
  }
};

// Binary per-pixel mask, row-major.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  PixelMask() = default;
  PixelMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }

  bool operator==(const PixelMask& o) const {
    return height == o.height && width == o.width && bits == o.bits;
  }
};

// Pixels whose brightest channel exceeds `threshold`. Rendered backgrounds are
// pure black, so this recovers the foreground of a stored instance.
inline PixelMask foreground_mask(const Image& img, float threshold = 0.02f) {
  PixelMask m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float v = std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      m.at(y, x) = v > threshold ? 1 : 0;
    }
  return m;
}

}  // namespace infmask
