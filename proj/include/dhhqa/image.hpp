#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dhhqa {

// 8-bit RGB raster, row-major, origin at top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width*height*3

  Image() = default;
  Image(int w, int h, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }

  bool operator==(const Image& o) const = default;
};

// Bilinear lookup at continuous texel coordinates, clamp-to-edge.
std::array<double, 3> bilinear_sample(const Image& img, double x, double y);

// Bilinear lookup in UV space: u right, v up, both in [0,1].
std::array<double, 3> sample_uv(const Image& img, double u, double v);

// Bilinear resize to (w, h).
Image resize_bilinear(const Image& img, int w, int h);

// PNG via libpng, JPEG via libjpeg. Format chosen by extension on write and
// by file magic on read. Throws std::runtime_error on failure.
Image load_image(const std::string& path);
void save_png(const Image& img, const std::string& path);

}  // namespace dhhqa
