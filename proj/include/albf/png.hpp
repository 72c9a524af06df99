#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "albf/error.hpp"

namespace albf {

/// 8-bit grayscale raster, row-major (height rows of width bytes).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  friend bool operator==(const Raster&, const Raster&) = default;
};

namespace detail {

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

struct ReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) png_error(png, "truncated PNG");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

}  // namespace detail

/// Encodes as 8-bit grayscale PNG with only IHDR/IDAT/IEND chunks.
inline std::vector<std::uint8_t> encode_png(const Raster& r) {
  require(r.width > 0 && r.height > 0 && r.pixels.size() == r.width * r.height, ErrorKind::Contract,
          "raster size does not match its pixel buffer");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < r.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(r.pixels.data() + y * r.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline Raster decode_png(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, ErrorKind::Integrity, "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "libpng initialisation failed");
  }
  Raster r;
  detail::ReadCursor cur{bytes.data(), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Integrity, "PNG decoding failed");
  }
  png_set_read_fn(png, &cur, detail::png_read_from_buffer);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Integrity, "expected 8-bit grayscale PNG");
  }
  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  r.pixels.resize(r.width * r.height);
  for (std::size_t y = 0; y < r.height; ++y) png_read_row(png, r.pixels.data() + y * r.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::Io, "short write to " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace albf
