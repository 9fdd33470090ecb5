#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "colf/rng.hpp"

namespace colf {

struct PixelCoord {
  double u = 0.0;  // along width
  double v = 0.0;  // along height
};

// Pinhole camera. The stored pose is world-from-camera: x_world = R x_cam + t,
// so the camera center is t. Projection inverts this explicitly; this is the
// single pose convention used everywhere in the codebase.
//
// Pixel-center convention: pixel (i,j) sits at continuous coordinate (i,j)
// exactly (no half-pixel offset), applied consistently in projection and
// interpolation.
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // world-from-camera rotation
  Eigen::Vector3d t = Eigen::Vector3d::Zero();      // camera center in world frame

  static Camera from_world_from_camera(double fx, double fy, double cx, double cy, int w, int h,
                                       const Eigen::Matrix3d& R, const Eigen::Vector3d& t);
  static Camera from_camera_from_world(double fx, double fy, double cx, double cy, int w, int h,
                                       const Eigen::Matrix3d& R_cw, const Eigen::Vector3d& t_cw);

  Eigen::Vector3d center() const { return t; }
  // Throws std::invalid_argument if R is not a proper rotation (1e-9) or the
  // intrinsics/extents are degenerate.
  void validate() const;
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();  // unit length
  double t_near = 0.0;
  double t_far = 1.0;

  Eigen::Vector3d at(double t) const { return origin + t * dir; }
};

struct Projection {
  PixelCoord px;
  double depth = 0.0;  // camera-frame Z
};

// World point -> pixel. Empty when the point is at or behind the camera
// plane (Z <= 1e-9); callers mask such samples.
std::optional<Projection> project(const Camera& cam, const Eigen::Vector3d& x);

Ray ray_for_pixel(const Camera& cam, const PixelCoord& px, double t_near, double t_far);

// Read-only view of an (h, w, c) row-major grid.
struct GridView {
  const double* data = nullptr;
  int64_t h = 0, w = 0, c = 0;
  const double* at(int64_t y, int64_t x) const { return data + (y * w + x) * c; }
};

struct BilinearSample {
  std::vector<double> value;
  bool in_bounds = true;  // scaled coords inside [0,w-1]x[0,h-1] before clamping
};

// 4-neighbor bilinear lookup. `scale` maps the caller's pixel coordinates to
// this grid (0.5 for a half-resolution feature grid, 1 for an image).
// Out-of-range coordinates are clamped to the border and reported.
BilinearSample bilinear(const GridView& grid, const PixelCoord& px, double scale);

// Precomputed bilinear footprint for the differentiable gather op: flat cell
// indices and weights of the 4 neighbors.
struct BilinearTap {
  int64_t idx[4];
  double w[4];
  bool in_bounds;
};
BilinearTap bilinear_tap(int64_t h, int64_t w, const PixelCoord& px, double scale);

struct AdjacentRay {
  Ray ray;
  PixelCoord px;            // integer pixel of the adjacent ray
  int du = 0, dv = 0;       // offset from the reference pixel
};

// Draws a ray through a distinct pixel of the same camera, offset uniformly
// within the max-offset box (Chebyshev radius), rejecting (0,0) and pixels
// outside the image.
AdjacentRay adjacent_ray(const Ray& reference, const PixelCoord& ref_px, const Camera& cam,
                         int max_offset, Rng& rng);

}  // namespace colf
