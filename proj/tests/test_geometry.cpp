#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "colf/geometry.hpp"

using namespace colf;

namespace {

Camera random_camera(Rng& rng, int size = 64) {
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))
                                   .normalized();
  const Eigen::Matrix3d R = Eigen::AngleAxisd(rng.uniform(-3.0, 3.0), axis).toRotationMatrix();
  const Eigen::Vector3d t(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  const double f = rng.uniform(40.0, 200.0);
  return Camera::from_world_from_camera(f, f * rng.uniform(0.9, 1.1), (size - 1) / 2.0, (size - 1) / 2.0,
                                        size, size, R, t);
}

}  // namespace

TEST_CASE("project on the optical axis") {
  Camera cam = Camera::from_world_from_camera(1, 1, 0, 0, 8, 8, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  auto p = project(cam, {0, 0, 1});
  REQUIRE(p.has_value());
  CHECK(p->px.u == doctest::Approx(0.0));
  CHECK(p->px.v == doctest::Approx(0.0));
  CHECK(p->depth == doctest::Approx(1.0));
}

TEST_CASE("project follows the pinhole formula") {
  Camera cam = Camera::from_world_from_camera(100, 100, 50, 50, 101, 101, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  auto p = project(cam, {0.5, 0, 1});
  REQUIRE(p.has_value());
  CHECK(p->px.u == doctest::Approx(100.0));
  CHECK(p->px.v == doctest::Approx(50.0));
  CHECK(p->depth == doctest::Approx(1.0));
}

TEST_CASE("points behind the camera are rejected for masking") {
  Camera cam = Camera::from_world_from_camera(1, 1, 0, 0, 8, 8, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  CHECK(!project(cam, {0, 0, -1}).has_value());
  CHECK(!project(cam, {0, 0, 0}).has_value());
}

TEST_CASE("ray through the principal point leaves along +z") {
  Camera cam = Camera::from_world_from_camera(120, 120, 32, 32, 65, 65, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  const Ray r = ray_for_pixel(cam, {32, 32}, 1.0, 2.0);
  CHECK((r.dir - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
  CHECK(std::abs(r.dir.norm() - 1.0) < 1e-9);
}

TEST_CASE("adjacent pixels at fx=1000 are about a milliradian apart") {
  Camera cam = Camera::from_world_from_camera(1000, 1000, 32, 32, 65, 65, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  const Ray a = ray_for_pixel(cam, {32, 32}, 1, 2);
  const Ray b = ray_for_pixel(cam, {33, 32}, 1, 2);
  const double angle = std::acos(std::min(1.0, a.dir.dot(b.dir)));
  CHECK(angle == doctest::Approx(1.0 / 1000.0).epsilon(1e-3));
}

TEST_CASE("camera center from a camera-from-world pose is -R^T t") {
  Rng rng(17);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Matrix3d R_cw =
        Eigen::AngleAxisd(rng.uniform(-3, 3), Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                                              rng.uniform(-1, 1))
                                                  .normalized())
            .toRotationMatrix();
    const Eigen::Vector3d t_cw(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    Camera cam = Camera::from_camera_from_world(50, 50, 8, 8, 17, 17, R_cw, t_cw);
    const Eigen::Vector3d expected = -R_cw.transpose() * t_cw;
    const Ray r = ray_for_pixel(cam, {8, 8}, 0.5, 2.0);
    CHECK((r.origin - expected).norm() < 1e-12);
    CHECK((cam.center() - expected).norm() < 1e-12);
  }
}

TEST_CASE("project inverts ray_for_pixel along the whole ray") {
  // Round-trip property over random cameras, pixels and depths; also covers
  // scale invariance of the projection in homogeneous depth.
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Camera cam = random_camera(rng);
    const PixelCoord px{rng.uniform(0, cam.width - 1.0), rng.uniform(0, cam.height - 1.0)};
    const Ray r = ray_for_pixel(cam, px, 0.3, 9.0);
    const double t = rng.uniform(0.3001, 8.999);
    const auto back = project(cam, r.at(t));
    REQUIRE(back.has_value());
    CHECK(std::abs(back->px.u - px.u) < 1e-9);
    CHECK(std::abs(back->px.v - px.v) < 1e-9);
  }
}

TEST_CASE("camera validation rejects bad rotations") {
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(0, 0) = 1.5;
  CHECK_THROWS_AS(Camera::from_world_from_camera(1, 1, 0, 0, 4, 4, bad, Eigen::Vector3d::Zero()),
                  std::invalid_argument);
  Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
  mirror(2, 2) = -1.0;  // orthonormal but det = -1
  CHECK_THROWS_AS(Camera::from_world_from_camera(1, 1, 0, 0, 4, 4, mirror, Eigen::Vector3d::Zero()),
                  std::invalid_argument);
}

TEST_CASE("bilinear at integer coordinates returns the grid value") {
  std::vector<double> g(4 * 4 * 2);
  for (size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  GridView view{g.data(), 4, 4, 2};
  auto s = bilinear(view, {2.0, 1.0}, 1.0);
  CHECK(s.in_bounds);
  CHECK(s.value[0] == doctest::Approx(g[(1 * 4 + 2) * 2]));
  CHECK(s.value[1] == doctest::Approx(g[(1 * 4 + 2) * 2 + 1]));
}

TEST_CASE("bilinear at a cell midpoint is the mean of the four corners") {
  std::vector<double> g = {1, 3, 5, 7};  // 2x2x1
  GridView view{g.data(), 2, 2, 1};
  auto s = bilinear(view, {0.5, 0.5}, 1.0);
  CHECK(s.value[0] == doctest::Approx(4.0));
}

TEST_CASE("bilinear matches a brute-force reimplementation on random grids") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 3 + static_cast<int>(rng.uniform_int(6));
    const int w = 3 + static_cast<int>(rng.uniform_int(6));
    const int c = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<double> g(static_cast<size_t>(h) * w * c);
    for (auto& v : g) v = rng.uniform(-2, 2);
    GridView view{g.data(), h, w, c};
    const double u = rng.uniform(0, w - 1.0);
    const double v = rng.uniform(0, h - 1.0);
    auto fast = bilinear(view, {u, v}, 1.0);
    // Straightforward per-channel loop, written independently of the library
    // path.
    const int x0 = std::min(static_cast<int>(std::floor(u)), w - 2);
    const int y0 = std::min(static_cast<int>(std::floor(v)), h - 2);
    const double fx = u - x0, fy = v - y0;
    for (int ch = 0; ch < c; ++ch) {
      const double expect = (1 - fx) * (1 - fy) * g[(y0 * w + x0) * c + ch] +
                            fx * (1 - fy) * g[(y0 * w + x0 + 1) * c + ch] +
                            (1 - fx) * fy * g[((y0 + 1) * w + x0) * c + ch] +
                            fx * fy * g[((y0 + 1) * w + x0 + 1) * c + ch];
      CHECK(fast.value[ch] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("bilinear reproduces affine grids exactly") {
  const double a = 0.7, b = -1.3, c0 = 0.25;
  const int h = 6, w = 5;
  std::vector<double> g(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g[y * w + x] = a * x + b * y + c0;
  GridView view{g.data(), h, w, 1};
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const double u = rng.uniform(0, w - 1.0);
    const double v = rng.uniform(0, h - 1.0);
    auto s = bilinear(view, {u, v}, 1.0);
    CHECK(std::abs(s.value[0] - (a * u + b * v + c0)) < 1e-9);
  }
}

TEST_CASE("bilinear half-resolution scaling and bounds flag") {
  std::vector<double> g(8 * 8, 1.0);
  GridView view{g.data(), 8, 8, 1};
  CHECK(bilinear(view, {14.0, 14.0}, 0.5).in_bounds);       // maps to (7,7)
  CHECK_FALSE(bilinear(view, {15.0, 14.0}, 0.5).in_bounds);  // maps past the border
  CHECK_FALSE(bilinear(view, {-0.5, 3.0}, 0.5).in_bounds);
}

TEST_CASE("adjacent rays stay inside the offset box and never coincide") {
  Camera cam = Camera::from_world_from_camera(80, 80, 31.5, 31.5, 64, 64, Eigen::Matrix3d::Identity(),
                                              Eigen::Vector3d::Zero());
  const PixelCoord ref_px{30, 29};
  const Ray ref = ray_for_pixel(cam, ref_px, 1, 4);
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const AdjacentRay adj = adjacent_ray(ref, ref_px, cam, 7, rng);
    CHECK(std::max(std::abs(adj.du), std::abs(adj.dv)) <= 7);
    CHECK((adj.du != 0 || adj.dv != 0));
    CHECK((adj.ray.origin - ref.origin).norm() == 0.0);
    CHECK(adj.px.u >= 0.0);
    CHECK(adj.px.u <= cam.width - 1);
  }
}
