#include "colf/image.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace colf {

Image Image::filled(int w, int h, double r, double g, double b) {
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
  }
  return img;
}

void Image::quantize8() {
  for (auto& v : rgb) {
    const double c = std::min(std::max(v, 0.0), 1.0);
    v = std::round(c * 255.0) / 255.0;
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: writer allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double* p = img.at(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(std::max(p[c], 0.0), 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: reader allocation failed");
  }
  std::vector<std::vector<png_byte>> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: corrupt or truncated file " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  // Normalize everything to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported layout in " + path);
  }
  rows.assign(h, std::vector<png_byte>(static_cast<size_t>(w) * 3));
  std::vector<png_bytep> row_ptrs(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y)
    for (size_t i = 0; i < static_cast<size_t>(w) * 3; ++i)
      img.rgb[static_cast<size_t>(y) * w * 3 + i] = rows[y][i] / 255.0;
  return img;
}

void write_depth(const std::string& path, const DepthMap& d) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("depth: cannot open " + path + " for writing");
  const uint32_t hdr[2] = {static_cast<uint32_t>(d.width), static_cast<uint32_t>(d.height)};
  if (std::fwrite(hdr, sizeof(uint32_t), 2, fp.get()) != 2 ||
      std::fwrite(d.depth.data(), sizeof(double), d.depth.size(), fp.get()) != d.depth.size())
    throw std::runtime_error("depth: write failed for " + path);
}

DepthMap read_depth(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("depth: cannot open " + path);
  uint32_t hdr[2];
  if (std::fread(hdr, sizeof(uint32_t), 2, fp.get()) != 2)
    throw std::runtime_error("depth: truncated header in " + path);
  DepthMap d;
  d.width = static_cast<int>(hdr[0]);
  d.height = static_cast<int>(hdr[1]);
  d.depth.resize(static_cast<size_t>(d.width) * d.height);
  if (std::fread(d.depth.data(), sizeof(double), d.depth.size(), fp.get()) != d.depth.size())
    throw std::runtime_error("depth: truncated payload in " + path);
  return d;
}

}  // namespace colf
