#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "arvit/core/tensor.hpp"

namespace arvit {

// Single-plane raster resampling on row-major [height * width] buffers.

// Area averaging: each output cell is the overlap-weighted mean of the source
// cells it covers. Works for shrinking and enlarging; a constant plane maps to
// the same constant and values stay inside the source range.
std::vector<Real> resize_area(std::span<const Real> src, std::size_t src_h, std::size_t src_w,
                              std::size_t dst_h, std::size_t dst_w);

// Bilinear interpolation with half-pixel centers and clamped edges. Identity
// when the sizes match.
std::vector<Real> resize_bilinear(std::span<const Real> src, std::size_t src_h,
                                  std::size_t src_w, std::size_t dst_h, std::size_t dst_w);

}  // namespace arvit
