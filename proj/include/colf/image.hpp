#pragma once

#include <string>
#include <vector>

#include "colf/geometry.hpp"

namespace colf {

// RGB image, row-major (h, w, 3), values in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;

  static Image filled(int w, int h, double r, double g, double b);
  double* at(int y, int x) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const double* at(int y, int x) const { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  GridView view() const { return {rgb.data(), height, width, 3}; }

  // Snaps every channel to the nearest 8-bit level (k/255) so PNG round-trips
  // are bit-exact.
  void quantize8();
};

struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> depth;
  double& at(int y, int x) { return depth[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return depth[static_cast<size_t>(y) * width + x]; }
};

// 8-bit RGB PNG I/O. Reads promote grayscale/palette/alpha inputs to RGB.
// Errors (missing file, truncation, checksum failures) throw with the path.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Raw little-endian f64 sidecar: u32 width, u32 height, then h*w doubles.
void write_depth(const std::string& path, const DepthMap& d);
DepthMap read_depth(const std::string& path);

}  // namespace colf
