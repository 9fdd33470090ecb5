#include "colf/geometry.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>

namespace colf {

Camera Camera::from_world_from_camera(double fx, double fy, double cx, double cy, int w, int h,
                                      const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = w;
  cam.height = h;
  cam.R = R;
  cam.t = t;
  cam.validate();
  return cam;
}

Camera Camera::from_camera_from_world(double fx, double fy, double cx, double cy, int w, int h,
                                      const Eigen::Matrix3d& R_cw, const Eigen::Vector3d& t_cw) {
  // x_cam = R_cw x_world + t_cw  =>  x_world = R_cwᵀ x_cam - R_cwᵀ t_cw
  return from_world_from_camera(fx, fy, cx, cy, w, h, R_cw.transpose(), -R_cw.transpose() * t_cw);
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw std::invalid_argument("Camera: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("Camera: image extents must be >= 1");
  const Eigen::Matrix3d err = R.transpose() * R - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("Camera: rotation is not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("Camera: rotation determinant is not +1");
}

std::optional<Projection> project(const Camera& cam, const Eigen::Vector3d& x) {
  const Eigen::Vector3d xc = cam.R.transpose() * (x - cam.t);  // camera frame
  if (xc.z() <= 1e-9) return std::nullopt;
  Projection p;
  p.px.u = cam.fx * xc.x() / xc.z() + cam.cx;
  p.px.v = cam.fy * xc.y() / xc.z() + cam.cy;
  p.depth = xc.z();
  return p;
}

Ray ray_for_pixel(const Camera& cam, const PixelCoord& px, double t_near, double t_far) {
  if (!(t_near >= 0.0) || !(t_near < t_far))
    throw std::invalid_argument("ray_for_pixel: bounds must satisfy 0 <= t_near < t_far");
  Ray r;
  const Eigen::Vector3d dir_cam((px.u - cam.cx) / cam.fx, (px.v - cam.cy) / cam.fy, 1.0);
  r.origin = cam.t;
  r.dir = (cam.R * dir_cam).normalized();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

BilinearTap bilinear_tap(int64_t h, int64_t w, const PixelCoord& px, double scale) {
  BilinearTap tap{};
  const double u = px.u * scale;
  const double v = px.v * scale;
  tap.in_bounds = (u >= 0.0 && u <= static_cast<double>(w - 1) && v >= 0.0 && v <= static_cast<double>(h - 1));
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
  const int64_t x0 = std::min(static_cast<int64_t>(std::floor(uc)), w - 2 >= 0 ? w - 2 : 0);
  const int64_t y0 = std::min(static_cast<int64_t>(std::floor(vc)), h - 2 >= 0 ? h - 2 : 0);
  const int64_t x1 = std::min(x0 + 1, w - 1);
  const int64_t y1 = std::min(y0 + 1, h - 1);
  const double fx = uc - static_cast<double>(x0);
  const double fy = vc - static_cast<double>(y0);
  tap.idx[0] = y0 * w + x0;
  tap.idx[1] = y0 * w + x1;
  tap.idx[2] = y1 * w + x0;
  tap.idx[3] = y1 * w + x1;
  tap.w[0] = (1.0 - fx) * (1.0 - fy);
  tap.w[1] = fx * (1.0 - fy);
  tap.w[2] = (1.0 - fx) * fy;
  tap.w[3] = fx * fy;
  return tap;
}

BilinearSample bilinear(const GridView& grid, const PixelCoord& px, double scale) {
  const BilinearTap tap = bilinear_tap(grid.h, grid.w, px, scale);
  BilinearSample out;
  out.in_bounds = tap.in_bounds;
  out.value.assign(grid.c, 0.0);
  for (int k = 0; k < 4; ++k) {
    const double* src = grid.data + tap.idx[k] * grid.c;
    for (int64_t j = 0; j < grid.c; ++j) out.value[j] += tap.w[k] * src[j];
  }
  return out;
}

AdjacentRay adjacent_ray(const Ray& reference, const PixelCoord& ref_px, const Camera& cam,
                         int max_offset, Rng& rng) {
  if (max_offset < 1) throw std::invalid_argument("adjacent_ray: max_offset must be >= 1");
  const int span = 2 * max_offset + 1;
  for (;;) {
    const int du = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(span))) - max_offset;
    const int dv = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(span))) - max_offset;
    if (du == 0 && dv == 0) continue;
    const double u = ref_px.u + du;
    const double v = ref_px.v + dv;
    if (u < 0 || u > cam.width - 1 || v < 0 || v > cam.height - 1) continue;
    AdjacentRay adj;
    adj.px = {u, v};
    adj.du = du;
    adj.dv = dv;
    adj.ray = ray_for_pixel(cam, adj.px, reference.t_near, reference.t_far);
    return adj;
  }
}

}  // namespace colf
