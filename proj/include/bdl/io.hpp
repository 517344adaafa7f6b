#pragma once

// BTSR tensor container and PNG preview export.
//
// BTSR layout (little-endian): "BTSR", u32 version (=1), u32 ndim,
// ndim x u32 dims, then prod(dims) x f32 row-major.

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "bdl/tensor.hpp"

namespace bdl {

inline constexpr std::uint32_t kBtsrVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("BTSR: truncated stream");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace detail

inline void write_btsr(std::ostream& os, const Tensor& t) {
  os.write("BTSR", 4);
  detail::put_u32(os, kBtsrVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.values()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("BTSR: write failed");
}

inline Tensor read_btsr(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BTSR", 4) != 0) throw IoError("BTSR: bad magic");
  const auto version = detail::get_u32(is);
  if (version != kBtsrVersion) throw IoError("BTSR: unsupported version " + std::to_string(version));
  const auto ndim = detail::get_u32(is);
  if (ndim == 0 || ndim > 16) throw IoError("BTSR: bad ndim " + std::to_string(ndim));
  Dims dims(ndim);
  for (auto& d : dims) d = detail::get_u32(is);
  const std::size_t n = checked_volume(dims);
  std::vector<float> data(n);
  for (auto& v : data) v = std::bit_cast<float>(detail::get_u32(is));
  return Tensor(std::move(dims), std::move(data));
}

inline void save_btsr(const std::filesystem::path& path, const Tensor& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_btsr(os, t);
}

inline Tensor load_btsr(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_btsr(is);
}

/// Writes a [3, H, W] tensor as 8-bit RGB PNG, clamped to [0, 1].
inline void save_png(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.channels() != 3) throw ShapeError("save_png: expected [3,H,W] tensor");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::size_t h = rgb.height(), w = rgb.width();
  std::vector<unsigned char> pixels(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb.at(c, y, x), 0.0f, 1.0f);
        pixels[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }

  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace bdl
