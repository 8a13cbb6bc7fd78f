#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "arvit/core/tensor.hpp"

namespace arvit {

// Single-channel raster, row-major, values nominally in [0,1].
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Real> values;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, Real fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  Real& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  Real at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const Raster&) const = default;

  Tensor to_tensor() const;  // [1,H,W]
};

Raster hflip(const Raster& r);
// Counter-clockwise quarter turns: out(y,x) = in(x, W-1-y) for one turn.
Raster rot90(const Raster& r, int quarter_turns = 1);

// Half-pixel-centre bilinear resampling with clamped edges.
Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width);
// Area-average then threshold at 0.5 to {0,1}.
Raster resize_mask(const Raster& r, std::size_t height, std::size_t width);
Raster binarize(const Raster& r, Real threshold = 0.5);

// 8-bit PNG I/O via libpng. Colour inputs are converted to gray; 16-bit
// inputs are reduced to 8 bits. Values are scaled to [0,1].
Raster read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Raster& r);
// rgb holds height*width*3 bytes.
void write_png_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
                   const std::vector<std::uint8_t>& rgb);

std::uint8_t to_byte(Real v);

}  // namespace arvit
