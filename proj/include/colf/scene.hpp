#pragma once

#include <array>
#include <string>
#include <vector>

#include "colf/geometry.hpp"
#include "colf/image.hpp"

namespace colf {

// Closed-form density/color primitives. Densities fall off linearly over a
// shell (fraction of the primitive size) so boundary gradients stay
// informative; shell 0 gives hard edges.
struct Primitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // sphere: size.x() = radius; box: half-extents
  double density = 1.0;                            // sigma_0 per world unit, >= 0
  std::array<double, 3> color{1.0, 1.0, 1.0};      // in [0,1]^3
  bool lambertian = false;                         // fixed-light diffuse shading, view-independent
  double shell = 0.1;                              // falloff width as a fraction of size
};

struct AnalyticField {
  std::vector<Primitive> primitives;
  std::array<double, 3> background{0.0, 0.0, 0.0};
};

struct FieldSample {
  double sigma = 0.0;
  std::array<double, 3> rgb{0.0, 0.0, 0.0};
};

// sigma = sum of containing primitives' densities; rgb = density-weighted
// mean color (first containing primitive's color when all weights are zero),
// background outside everything. Pure and order-independent.
FieldSample field_eval(const AnalyticField& field, const Eigen::Vector3d& x);

struct SceneDataset {
  double near = 0.0, far = 1.0;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  std::vector<Camera> cameras;
  std::vector<Image> images;
  std::vector<DepthMap> depths;        // oracle depth, one per view (may be empty on ingested data)
  std::vector<std::string> splits;     // "source" | "target" per view
};

// Deterministic midpoint-quadrature render of the analytic field: ground
// truth for images and depth. Parallel over rows when threads > 1.
void oracle_render(const AnalyticField& field, const Camera& cam, int samples_per_ray, double near,
                   double far, Image& out_image, DepthMap& out_depth, int threads = 1);

enum class Layout { Ring, Hemisphere };

struct SceneSpec {
  AnalyticField field;
  int n_views = 3;
  int n_source = 3;          // first n_source views are labeled "source"
  Layout layout = Layout::Ring;
  int image_size = 64;
  uint64_t seed = 1;
  double radius = 4.0;
  double elevation_deg = 18.0;  // ring elevation; hemisphere spreads above it
  double fov_deg = 40.0;
  double near = 2.5;
  double far = 5.5;
  int oracle_samples = 512;
  int threads = 1;
};

// Cameras on the requested layout, all looking at the origin, ordered so the
// leading views cover the azimuth range evenly (sources first). Images are
// oracle renders quantized to 8-bit levels; depth sidecars stay full f64.
SceneDataset make_scene(const SceneSpec& spec);

// The default desk scene: three disjoint colored spheres of distinct radii
// inside the unit cube. seed != 0 jitters centers, radii and colors
// deterministically so fresh unseen scenes are easy to mint.
AnalyticField tri_sphere_field(uint64_t seed = 0);

// Directory layout: scene.json manifest + images/*.png + depth/*.f64.
void save_dataset(const SceneDataset& ds, const std::string& dir);
SceneDataset load_dataset(const std::string& dir);

}  // namespace colf
