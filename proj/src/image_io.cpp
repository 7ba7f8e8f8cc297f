#include "agmtr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "agmtr/errors.hpp"

namespace agmtr {

namespace {

struct File {
  std::FILE* f;
  ~File() {
    if (f) std::fclose(f);
  }
};

struct Decoded {
  int64_t height, width;
  int channels;
  std::vector<uint8_t> data;
};

Decoded decode(const std::filesystem::path& path) {
  File file{std::fopen(path.c_str(), "rb")};
  if (!file.f) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Decoded out{};
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.data.resize(static_cast<size_t>(out.height * out.width * out.channels));
  rows.resize(static_cast<size_t>(out.height));
  for (int64_t y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = out.data.data() + y * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode(const std::filesystem::path& path, int64_t height, int64_t width, int channels, const std::vector<uint8_t>& data) {
  File file{std::fopen(path.c_str(), "wb")};
  if (!file.f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or other chunks, so equal pixels give equal bytes.
  png_write_info(png, info);
  for (int64_t y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(data.data() + y * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensor read_png_rgb(const std::filesystem::path& path) {
  const auto d = decode(path);
  Tensor out({d.height, d.width, 3});
  for (int64_t i = 0; i < d.height * d.width; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const int64_t src = d.channels >= 3 ? i * d.channels + c : i * d.channels;
      out[i * 3 + c] = d.data[static_cast<size_t>(src)] / 255.0;
    }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  require_rank(image, 3, "write_png_rgb");
  if (image.dim(2) != 3) throw ShapeMismatch("write_png_rgb: expected 3 channels");
  std::vector<uint8_t> bytes(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) bytes[static_cast<size_t>(i)] = to_byte(image[i]);
  encode(path, image.dim(0), image.dim(1), 3, bytes);
}

BinaryMask read_png_mask(const std::filesystem::path& path) {
  const auto d = decode(path);
  BinaryMask out(d.height, d.width);
  for (int64_t i = 0; i < d.height * d.width; ++i) out.set(i, d.data[static_cast<size_t>(i * d.channels)] != 0);
  return out;
}

void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<uint8_t> bytes(static_cast<size_t>(mask.size()));
  for (int64_t i = 0; i < mask.size(); ++i) bytes[static_cast<size_t>(i)] = mask[i] ? 255 : 0;
  encode(path, mask.height(), mask.width(), 1, bytes);
}

}  // namespace agmtr
