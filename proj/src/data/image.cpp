#include "arvit/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "arvit/core/errors.hpp"
#include "arvit/core/resample.hpp"

namespace arvit {

Tensor Raster::to_tensor() const { return Tensor({1, height, width}, values); }

Raster hflip(const Raster& r) {
  Raster out(r.height, r.width);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x) out.at(y, x) = r.at(y, r.width - 1 - x);
  return out;
}

Raster rot90(const Raster& r, int quarter_turns) {
  const int turns = ((quarter_turns % 4) + 4) % 4;
  Raster cur = r;
  for (int t = 0; t < turns; ++t) {
    Raster out(cur.width, cur.height);
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = cur.at(x, cur.width - 1 - y);
    cur = std::move(out);
  }
  return cur;
}

Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width) {
  Raster out(height, width);
  out.values = resize_bilinear(r.values, r.height, r.width, height, width);
  return out;
}

Raster binarize(const Raster& r, Real threshold) {
  Raster out = r;
  for (Real& v : out.values) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

Raster resize_mask(const Raster& r, std::size_t height, std::size_t width) {
  Raster out(height, width);
  out.values = resize_area(r.values, r.height, r.width, height, width);
  return binarize(out);
}

std::uint8_t to_byte(Real v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Raster read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Raster r(image.height, image.width);
  for (std::size_t i = 0; i < buffer.size(); ++i) r.values[i] = buffer[i] / 255.0;
  return r;
}

namespace {

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
               png_uint_32 format, const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const Raster& r) {
  std::vector<std::uint8_t> bytes(r.values.size());
  std::transform(r.values.begin(), r.values.end(), bytes.begin(), to_byte);
  write_png(path, r.height, r.width, PNG_FORMAT_GRAY, bytes);
}

void write_png_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) throw ContractError("write_png_rgb: buffer size mismatch");
  write_png(path, height, width, PNG_FORMAT_RGB, rgb);
}

}  // namespace arvit
