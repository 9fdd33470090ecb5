#include "colf/scene.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace colf {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr uint32_t kManifestVersion = 1;

// Smooth membership in [0,1]: 1 inside the core, linear falloff across the
// shell, 0 outside.
double primitive_weight(const Primitive& p, const Eigen::Vector3d& x) {
  if (p.kind == Primitive::Kind::Sphere) {
    const double r = p.size.x();
    const double dist = (x - p.center).norm();
    const double sh = p.shell * r;
    if (dist <= r - sh) return 1.0;
    if (dist >= r) return 0.0;
    return sh > 0.0 ? (r - dist) / sh : 0.0;
  }
  // Box: product of per-axis ramps.
  double w = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double half = p.size[k];
    const double d = std::abs(x[k] - p.center[k]);
    const double sh = p.shell * half;
    if (d >= half) return 0.0;
    if (d > half - sh && sh > 0.0) w *= (half - d) / sh;
  }
  return w;
}

std::array<double, 3> shaded_color(const Primitive& p, const Eigen::Vector3d& x) {
  if (!p.lambertian) return p.color;
  static const Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.3, 0.87).normalized();
  Eigen::Vector3d n;
  if (p.kind == Primitive::Kind::Sphere) {
    n = x - p.center;
  } else {
    // Dominant axis of the offset, in box-relative units.
    const Eigen::Vector3d rel = (x - p.center).cwiseQuotient(p.size);
    int axis = 0;
    rel.cwiseAbs().maxCoeff(&axis);
    n = Eigen::Vector3d::Zero();
    n[axis] = rel[axis] > 0 ? 1.0 : -1.0;
  }
  const double nn = n.norm();
  const double lambert = nn > 1e-12 ? std::max(0.0, n.dot(light) / nn) : 1.0;
  const double shade = 0.25 + 0.75 * lambert;
  return {p.color[0] * shade, p.color[1] * shade, p.color[2] * shade};
}

}  // namespace

FieldSample field_eval(const AnalyticField& field, const Eigen::Vector3d& x) {
  FieldSample s;
  s.rgb = field.background;
  double color_accum[3] = {0, 0, 0};
  double weight_accum = 0.0;
  const Primitive* first_hit = nullptr;
  for (const auto& p : field.primitives) {
    const double w = primitive_weight(p, x);
    if (w <= 0.0) continue;
    if (!first_hit) first_hit = &p;
    const double sig = p.density * w;
    s.sigma += sig;
    const auto c = shaded_color(p, x);
    for (int k = 0; k < 3; ++k) color_accum[k] += sig * c[k];
    weight_accum += sig;
  }
  if (weight_accum > 0.0) {
    for (int k = 0; k < 3; ++k) s.rgb[k] = color_accum[k] / weight_accum;
  } else if (first_hit) {
    s.rgb = shaded_color(*first_hit, x);
  }
  return s;
}

void oracle_render(const AnalyticField& field, const Camera& cam, int samples_per_ray, double near,
                   double far, Image& out_image, DepthMap& out_depth, int threads) {
  if (samples_per_ray < 2) throw std::invalid_argument("oracle_render: need at least 2 samples per ray");
  out_image = Image::filled(cam.width, cam.height, 0, 0, 0);
  out_depth.width = cam.width;
  out_depth.height = cam.height;
  out_depth.depth.assign(static_cast<size_t>(cam.width) * cam.height, 0.0);

  const double dt = (far - near) / samples_per_ray;
  auto render_rows = [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray ray = ray_for_pixel(cam, {static_cast<double>(x), static_cast<double>(y)}, near, far);
        double T = 1.0;
        double c[3] = {0, 0, 0};
        double depth = 0.0;
        for (int i = 0; i < samples_per_ray; ++i) {
          const double t = near + (i + 0.5) * dt;
          const FieldSample s = field_eval(field, ray.at(t));
          const double alpha = 1.0 - std::exp(-s.sigma * dt);
          const double w = T * alpha;
          for (int k = 0; k < 3; ++k) c[k] += w * s.rgb[k];
          depth += w * t;
          T *= 1.0 - alpha;
        }
        double* px = out_image.at(y, x);
        for (int k = 0; k < 3; ++k) px[k] = c[k] + T * field.background[k];
        out_depth.at(y, x) = depth;
      }
    }
  };

  const int nthreads = std::max(1, std::min(threads, cam.height));
  if (nthreads == 1) {
    render_rows(0, cam.height);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (cam.height + nthreads - 1) / nthreads;
  for (int i = 0; i < nthreads; ++i) {
    const int y0 = i * chunk;
    const int y1 = std::min(cam.height, y0 + chunk);
    if (y0 < y1) pool.emplace_back(render_rows, y0, y1);
  }
  for (auto& th : pool) th.join();
}

AnalyticField tri_sphere_field(uint64_t seed) {
  Rng rng(Rng::mix(0x7472697370686572ull, seed));
  auto jitter = [&](double scale) { return seed == 0 ? 0.0 : rng.uniform(-scale, scale); };
  AnalyticField f;
  f.background = {0.0, 0.0, 0.0};
  const struct {
    Eigen::Vector3d c;
    double r;
    std::array<double, 3> col;
  } base[3] = {
      {{0.42, 0.10, 0.05}, 0.34, {0.92, 0.18, 0.12}},
      {{-0.40, 0.32, -0.08}, 0.26, {0.15, 0.80, 0.25}},
      {{-0.05, -0.42, 0.22}, 0.20, {0.20, 0.35, 0.95}},
  };
  for (const auto& b : base) {
    Primitive p;
    p.kind = Primitive::Kind::Sphere;
    p.center = b.c + Eigen::Vector3d(jitter(0.08), jitter(0.08), jitter(0.08));
    p.size = Eigen::Vector3d::Constant(std::max(0.12, b.r + jitter(0.05)));
    // Density and shell keep the spheres opaque while the falloff stays wide
    // enough that stratified quadrature at render sample counts resolves it.
    p.density = 8.0;
    p.color = b.col;
    for (auto& ch : p.color) ch = std::min(1.0, std::max(0.05, ch + jitter(0.15)));
    p.shell = 0.25;
    f.primitives.push_back(p);
  }
  return f;
}

namespace {

Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double fov_deg, int size) {
  const Eigen::Vector3d world_up(0, 0, 1);
  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(world_up);
  if (x.norm() < 1e-9) x = z.cross(Eigen::Vector3d::UnitY());  // top-down degenerate case
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);  // image v grows downward in world terms
  Eigen::Matrix3d R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  const double f = (size / 2.0) / std::tan(fov_deg * std::numbers::pi / 360.0);
  const double c = (size - 1) / 2.0;
  return Camera::from_world_from_camera(f, f, c, c, size, size, R, eye);
}

// Orders n ring slots so any leading prefix covers the circle evenly:
// stride-2 interleave (evens first, then odds).
std::vector<int> interleaved_order(int n) {
  std::vector<int> order;
  for (int k = 0; k < n; k += 2) order.push_back(k);
  for (int k = 1; k < n; k += 2) order.push_back(k);
  return order;
}

}  // namespace

SceneDataset make_scene(const SceneSpec& spec) {
  if (spec.n_views < 2) throw std::invalid_argument("make_scene: need at least 2 views");
  if (spec.n_source < 1 || spec.n_source > spec.n_views)
    throw std::invalid_argument("make_scene: n_source out of range");
  SceneDataset ds;
  ds.near = spec.near;
  ds.far = spec.far;
  ds.background = spec.field.background;

  Rng rng(Rng::mix(spec.seed, 0x7363656e65ull));
  const auto order = interleaved_order(spec.n_views);
  for (int i = 0; i < spec.n_views; ++i) {
    const double az = 2.0 * std::numbers::pi * order[i] / spec.n_views;
    double el = spec.elevation_deg * std::numbers::pi / 180.0;
    if (spec.layout == Layout::Hemisphere) {
      // Deterministic spread of elevations over the upper cap.
      el += (0.15 + 0.55 * rng.uniform01()) * (std::numbers::pi / 2.0 - el);
    }
    const Eigen::Vector3d eye(spec.radius * std::cos(el) * std::cos(az),
                              spec.radius * std::cos(el) * std::sin(az), spec.radius * std::sin(el));
    ds.cameras.push_back(look_at_camera(eye, Eigen::Vector3d::Zero(), spec.fov_deg, spec.image_size));
    ds.splits.push_back(i < spec.n_source ? "source" : "target");
  }
  for (size_t i = 0; i + 1 < ds.cameras.size(); ++i)
    for (size_t j = i + 1; j < ds.cameras.size(); ++j)
      if ((ds.cameras[i].center() - ds.cameras[j].center()).norm() < 1e-6)
        throw std::invalid_argument("make_scene: degenerate layout, coincident cameras");

  ds.images.resize(ds.cameras.size());
  ds.depths.resize(ds.cameras.size());
  for (size_t i = 0; i < ds.cameras.size(); ++i) {
    oracle_render(spec.field, ds.cameras[i], spec.oracle_samples, spec.near, spec.far, ds.images[i],
                  ds.depths[i], spec.threads);
    ds.images[i].quantize8();
  }
  return ds;
}

void save_dataset(const SceneDataset& ds, const std::string& dir) {
  if (ds.images.size() != ds.cameras.size())
    throw std::invalid_argument("save_dataset: image/camera count mismatch");
  fs::create_directories(fs::path(dir) / "images");
  if (!ds.depths.empty()) fs::create_directories(fs::path(dir) / "depth");

  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["background"] = ds.background;
  manifest["near"] = ds.near;
  manifest["far"] = ds.far;
  manifest["cameras"] = json::array();
  manifest["images"] = json::array();
  manifest["splits"] = ds.splits;
  if (!ds.depths.empty()) manifest["depths"] = json::array();

  char name[64];
  for (size_t i = 0; i < ds.cameras.size(); ++i) {
    const Camera& cam = ds.cameras[i];
    json jc;
    jc["fx"] = cam.fx;
    jc["fy"] = cam.fy;
    jc["cx"] = cam.cx;
    jc["cy"] = cam.cy;
    jc["width"] = cam.width;
    jc["height"] = cam.height;
    std::array<double, 12> pose;  // world-from-camera, row-major [R|t]
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose[r * 4 + c] = cam.R(r, c);
      pose[r * 4 + 3] = cam.t(r);
    }
    jc["pose"] = pose;
    manifest["cameras"].push_back(jc);

    std::snprintf(name, sizeof(name), "images/view_%03zu.png", i);
    manifest["images"].push_back(name);
    write_png((fs::path(dir) / name).string(), ds.images[i]);
    if (!ds.depths.empty()) {
      std::snprintf(name, sizeof(name), "depth/view_%03zu.f64", i);
      manifest["depths"].push_back(name);
      write_depth((fs::path(dir) / name).string(), ds.depths[i]);
    }
  }

  std::ofstream os(fs::path(dir) / "scene.json");
  if (!os) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

SceneDataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "scene.json";
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("load_dataset: missing manifest " + manifest_path.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  const auto version = manifest.at("format_version").get<uint32_t>();
  if (version != kManifestVersion)
    throw std::runtime_error("load_dataset: unsupported manifest version " + std::to_string(version) +
                             " in " + manifest_path.string());

  SceneDataset ds;
  try {
    ds.background = manifest.at("background").get<std::array<double, 3>>();
    ds.near = manifest.at("near").get<double>();
    ds.far = manifest.at("far").get<double>();
    for (const auto& jc : manifest.at("cameras")) {
      const auto pose = jc.at("pose").get<std::array<double, 12>>();
      Eigen::Matrix3d R;
      Eigen::Vector3d t;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) R(r, c) = pose[r * 4 + c];
        t(r) = pose[r * 4 + 3];
      }
      ds.cameras.push_back(Camera::from_world_from_camera(jc.at("fx"), jc.at("fy"), jc.at("cx"),
                                                          jc.at("cy"), jc.at("width"), jc.at("height"), R,
                                                          t));
    }
    ds.splits = manifest.at("splits").get<std::vector<std::string>>();
    for (const auto& rel : manifest.at("images")) {
      const std::string path = (fs::path(dir) / rel.get<std::string>()).string();
      ds.images.push_back(read_png(path));
    }
    if (manifest.contains("depths")) {
      for (const auto& rel : manifest.at("depths")) {
        const std::string path = (fs::path(dir) / rel.get<std::string>()).string();
        ds.depths.push_back(read_depth(path));
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  if (ds.images.size() != ds.cameras.size())
    throw std::runtime_error("load_dataset: image/camera count mismatch in " + manifest_path.string());
  for (size_t i = 0; i < ds.images.size(); ++i)
    if (ds.images[i].width != ds.cameras[i].width || ds.images[i].height != ds.cameras[i].height)
      throw std::runtime_error("load_dataset: image extents disagree with camera " + std::to_string(i));
  return ds;
}

}  // namespace colf
