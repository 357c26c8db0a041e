#pragma once

// 8-bit PNG reading and writing. Palette images are returned as raw palette
// indices, which is how segmentation masks store class ids.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "cwbass/core.hpp"

namespace cwbass {

struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray or palette index) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png(const std::string& path, const RasterImage& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidInput("write_png: 1 or 3 channels");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw InvalidInput("write_png: pixel buffer size mismatch");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error("write_png: cannot open '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng error writing '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit PNG. With `raw_indices`, palette and gray images come back
/// as one channel of stored values; otherwise everything expands to RGB.
inline RasterImage read_png(const std::string& path, bool raw_indices) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw LoadError("read_png: cannot open '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw LoadError("read_png: '" + path + "' is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("read_png: libpng init failed");
  }
  RasterImage out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("read_png: libpng error reading '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8) png_set_packing(png);
  if (raw_indices) {
    if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw LoadError("read_png: mask '" + path + "' must be palette or grayscale");
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline Image raster_to_image(const RasterImage& r) {
  Image img(r.channels, r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c)
        img(c, y, x) = r.pixels[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] / 255.f;
  return img;
}

inline RasterImage image_to_raster(const Image& img) {
  RasterImage r{img.width(), img.height(), img.channels(), {}};
  r.pixels.resize(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const float v = std::clamp(img(c, y, x), 0.f, 1.f);
        r.pixels[(static_cast<std::size_t>(y) * img.width() + x) * img.channels() + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  return r;
}

inline RasterImage label_to_raster(const LabelMap& m) {
  RasterImage r{m.width(), m.height(), 1, {}};
  r.pixels.resize(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (m[j] < 0 || m[j] > 255) throw InvalidInput("label_to_raster: value not 8-bit");
    r.pixels[j] = static_cast<std::uint8_t>(m[j]);
  }
  return r;
}

}  // namespace cwbass
