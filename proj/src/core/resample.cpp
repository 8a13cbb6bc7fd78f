#include "arvit/core/resample.hpp"

#include <algorithm>
#include <cmath>

#include "arvit/core/errors.hpp"

namespace arvit {

namespace {

struct Tap {
  std::size_t index;
  Real weight;
};

// Source cells overlapping output cell i along one axis, with overlap lengths
// measured in source units.
std::vector<std::vector<Tap>> area_taps(std::size_t src, std::size_t dst) {
  std::vector<std::vector<Tap>> taps(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    // Exact rational bounds i*src/dst .. (i+1)*src/dst.
    const std::size_t lo_num = i * src;
    const std::size_t hi_num = (i + 1) * src;
    const std::size_t first = lo_num / dst;
    const std::size_t last = (hi_num + dst - 1) / dst;  // exclusive
    for (std::size_t s = first; s < last && s < src; ++s) {
      const std::size_t cell_lo = std::max(lo_num, s * dst);
      const std::size_t cell_hi = std::min(hi_num, (s + 1) * dst);
      if (cell_hi <= cell_lo) continue;
      taps[i].push_back({s, static_cast<Real>(cell_hi - cell_lo)});
    }
  }
  return taps;
}

void check_sizes(std::span<const Real> src, std::size_t h, std::size_t w, std::size_t dh,
                 std::size_t dw) {
  if (h == 0 || w == 0 || dh == 0 || dw == 0) throw DimensionError("resize: empty raster");
  if (src.size() != h * w) throw DimensionError("resize: buffer does not match raster size");
}

}  // namespace

std::vector<Real> resize_area(std::span<const Real> src, std::size_t src_h, std::size_t src_w,
                              std::size_t dst_h, std::size_t dst_w) {
  check_sizes(src, src_h, src_w, dst_h, dst_w);
  if (src_h == dst_h && src_w == dst_w) return {src.begin(), src.end()};
  const auto ty = area_taps(src_h, dst_h);
  const auto tx = area_taps(src_w, dst_w);
  std::vector<Real> out(dst_h * dst_w);
  for (std::size_t i = 0; i < dst_h; ++i) {
    for (std::size_t j = 0; j < dst_w; ++j) {
      Real num = 0.0, den = 0.0;
      for (const Tap& y : ty[i]) {
        for (const Tap& x : tx[j]) {
          const Real w = y.weight * x.weight;
          num += w * src[y.index * src_w + x.index];
          den += w;
        }
      }
      out[i * dst_w + j] = num / den;
    }
  }
  return out;
}

std::vector<Real> resize_bilinear(std::span<const Real> src, std::size_t src_h,
                                  std::size_t src_w, std::size_t dst_h, std::size_t dst_w) {
  check_sizes(src, src_h, src_w, dst_h, dst_w);
  if (src_h == dst_h && src_w == dst_w) return {src.begin(), src.end()};
  auto coords = [](std::size_t src_n, std::size_t dst_n) {
    std::vector<std::pair<std::size_t, Real>> c(dst_n);
    const Real ratio = static_cast<Real>(src_n) / static_cast<Real>(dst_n);
    for (std::size_t i = 0; i < dst_n; ++i) {
      Real s = (static_cast<Real>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<Real>(src_n - 1));
      const std::size_t lo = std::min(static_cast<std::size_t>(std::floor(s)), src_n - 1);
      c[i] = {lo, s - static_cast<Real>(lo)};
    }
    return c;
  };
  const auto cy = coords(src_h, dst_h);
  const auto cx = coords(src_w, dst_w);
  std::vector<Real> out(dst_h * dst_w);
  for (std::size_t i = 0; i < dst_h; ++i) {
    const auto [y0, fy] = cy[i];
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    for (std::size_t j = 0; j < dst_w; ++j) {
      const auto [x0, fx] = cx[j];
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const Real top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
      const Real bottom = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
      out[i * dst_w + j] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

}  // namespace arvit
