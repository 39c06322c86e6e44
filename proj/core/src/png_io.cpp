#include "vmseg/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "vmseg/errors.hpp"

namespace vmseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return uint8_t(std::lround(c * 255.0f));
}

// libpng reports errors through longjmp; everything that must be cleaned up
// lives outside the setjmp scope so the jump only skips png calls.
void write_png(const std::string& path, int64_t h, int64_t w, int color_type,
               const std::vector<uint8_t>& pixels, int64_t stride) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng writer allocation failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info allocation failed for " + path);
  }
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t r = 0; r < h; ++r)
    rows[size_t(r)] = const_cast<png_bytep>(pixels.data() + r * stride);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor<float>& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("write_png_rgb expects a [3,h,w] image" +
                     (image.defined() ? ", got " + shape_str(image.shape()) : std::string()));
  int64_t h = image.dim(1), w = image.dim(2);
  auto v = image.data();
  std::vector<uint8_t> pixels(size_t(h * w * 3));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        pixels[size_t((r * w + c) * 3 + ch)] = quantize(v[size_t(ch * h * w + r * w + c)]);
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, pixels, w * 3);
}

void write_png_gray(const std::string& path, const Tensor<float>& map) {
  if (!map.defined() || map.rank() != 2)
    throw ShapeError("write_png_gray expects a [h,w] map" +
                     (map.defined() ? ", got " + shape_str(map.shape()) : std::string()));
  int64_t h = map.dim(0), w = map.dim(1);
  auto v = map.data();
  std::vector<uint8_t> pixels(size_t(h * w));
  for (int64_t i = 0; i < h * w; ++i) pixels[size_t(i)] = quantize(v[size_t(i)]);
  write_png(path, h, w, PNG_COLOR_TYPE_GRAY, pixels, w);
}

Tensor<float> read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng reader allocation failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info allocation failed for " + path);
  }
  std::vector<uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  channels = int(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + " decodes to " + std::to_string(channels) +
                  " channels, expected grayscale or RGB");
  }
  pixels.resize(size_t(h) * size_t(w) * size_t(channels));
  rows.resize(size_t(h));
  for (png_uint_32 r = 0; r < h; ++r)
    rows[size_t(r)] = pixels.data() + size_t(r) * size_t(w) * size_t(channels);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  int64_t ih = int64_t(h), iw = int64_t(w), c = channels;
  std::vector<float> out(size_t(c * ih * iw));
  for (int64_t r = 0; r < ih; ++r)
    for (int64_t col = 0; col < iw; ++col)
      for (int64_t ch = 0; ch < c; ++ch)
        out[size_t(ch * ih * iw + r * iw + col)] =
            float(pixels[size_t((r * iw + col) * c + ch)]) / 255.0f;
  return Tensor<float>::from_data({c, ih, iw}, std::move(out));
}

}  // namespace vmseg
