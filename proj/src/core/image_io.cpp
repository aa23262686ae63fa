#include "core/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

namespace tbsn {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

Tensor<float> read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open PNG", path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail("not a PNG file", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("libpng error while reading", path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const png_byte channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("unsupported channel count after expansion", path);
  }

  std::vector<png_byte> row(png_get_rowbytes(png, info));
  Tensor<float> img(1, channels, static_cast<int>(h), static_cast<int>(w));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(0, c, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(row[x * channels + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.n != 1 || (img.c != 1 && img.c != 3))
    throw std::runtime_error("write_png expects 1xCxHxW with C in {1,3}, got " +
                             img.shape_str());

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open PNG for writing", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("libpng error while writing", path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h),
               8, img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        const float v = std::clamp(img.at(0, c, y, x), 0.0f, 1.0f);
        row[static_cast<size_t>(x) * img.c + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_pfm(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open PFM", path);

  char tag[3] = {0, 0, 0};
  int w = 0, h = 0;
  double scale = 0.0;
  if (std::fscanf(fp.get(), "%2s %d %d %lf", tag, &w, &h, &scale) != 4)
    fail("malformed PFM header", path);
  int channels;
  if (std::strcmp(tag, "PF") == 0)
    channels = 3;
  else if (std::strcmp(tag, "Pf") == 0)
    channels = 1;
  else
    fail("not a PFM file", path);
  if (w <= 0 || h <= 0) fail("bad PFM dimensions", path);
  if (scale >= 0.0) fail("big-endian PFM not supported", path);

  // Single whitespace byte separates the header from the raster.
  if (std::fgetc(fp.get()) == EOF) fail("truncated PFM", path);

  const size_t row_floats = static_cast<size_t>(w) * channels;
  std::vector<float> row(row_floats);
  Tensor<float> img(1, channels, h, w);
  for (int y = h - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row_floats, fp.get()) != row_floats)
      fail("truncated PFM raster", path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(0, c, y, x) = row[static_cast<size_t>(x) * channels + c];
  }
  return img;
}

void write_pfm(const std::string& path, const Tensor<float>& img) {
  if (img.n != 1 || (img.c != 1 && img.c != 3))
    throw std::runtime_error("write_pfm expects 1xCxHxW with C in {1,3}, got " +
                             img.shape_str());

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open PFM for writing", path);

  std::fprintf(fp.get(), "%s\n%d %d\n-1.0\n", img.c == 3 ? "PF" : "Pf", img.w, img.h);
  const size_t row_floats = static_cast<size_t>(img.w) * img.c;
  std::vector<float> row(row_floats);
  for (int y = img.h - 1; y >= 0; --y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c)
        row[static_cast<size_t>(x) * img.c + c] = img.at(0, c, y, x);
    if (std::fwrite(row.data(), sizeof(float), row_floats, fp.get()) != row_floats)
      fail("short write on PFM raster", path);
  }
}

}  // namespace tbsn
