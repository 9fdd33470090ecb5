#pragma once

#include <array>
#include <vector>

#include "colf/field.hpp"
#include "colf/geometry.hpp"
#include "colf/scene.hpp"
#include "colf/tensor.hpp"

namespace colf {

// One stratified sample per bin: t_i ~ U[t_n + i/N (t_f-t_n), t_n + (i+1)/N (t_f-t_n)).
// Strictly ascending by construction.
std::vector<double> stratified_samples(double t_near, double t_far, int n_bins, Rng& rng);

// Inverse-CDF draws from the piecewise-constant density proportional to the
// coarse weights plus a floor of 1e-2 * mean(weights); all-zero weights fall
// back to a uniform density. Segment i spans [t_i, t_{i+1}) with the last
// segment capped at t_far. Draws are unsorted; callers merge and sort.
std::vector<double> importance_samples(const std::vector<double>& weights,
                                       const std::vector<double>& coarse_t, double t_far, int n_fine,
                                       Rng& rng);

struct CompositeResult {
  TensorPtr color;     // (R,3): sum w_i rgb_i + residual transmittance * background
  TensorPtr depth;     // (R,1): sum w_i t_i
  TensorPtr opacity;   // (R,1): sum w_i
  TensorPtr qdensity;  // (R,1): sum alpha_i (cumulative ray density)
  TensorPtr weights;   // (R,S)
};

// Differentiable quadrature over per-ray samples: alpha_i = 1-exp(-sigma_i
// delta_i), T_i = prod_{j<i}(1-alpha_j), w_i = T_i alpha_i. All five outputs
// share one forward evaluation; gradients flow into sigma and rgb.
// t/delta are fixed sample geometry (R*S each, delta_i > 0).
CompositeResult composite(const TensorPtr& sigma, const TensorPtr& rgb, const std::vector<double>& t,
                          const std::vector<double>& delta, const std::array<double, 3>& background);

// Per-sample field query used by the renderer. Returns sigma (B,1) and rgb
// (B,3) for B points; graph-connected when the implementation is neural.
class SampleEvaluator {
 public:
  virtual ~SampleEvaluator() = default;
  virtual std::pair<TensorPtr, TensorPtr> operator()(const std::vector<Eigen::Vector3d>& points,
                                                     const std::vector<Eigen::Vector3d>& dirs) = 0;
};

// Closed-form field lookup (verification path, carries no gradients).
class OracleFieldEvaluator final : public SampleEvaluator {
 public:
  explicit OracleFieldEvaluator(const AnalyticField& field) : field_(&field) {}
  std::pair<TensorPtr, TensorPtr> operator()(const std::vector<Eigen::Vector3d>& points,
                                             const std::vector<Eigen::Vector3d>& dirs) override;

 private:
  const AnalyticField* field_;
};

// Feature-conditioned radiance network lookup.
class NeuralFieldEvaluator final : public SampleEvaluator {
 public:
  NeuralFieldEvaluator(const RadianceNet& net, const std::vector<TensorPtr>& fused_volumes,
                       const std::vector<Camera>& source_cams)
      : net_(&net), volumes_(&fused_volumes), cams_(&source_cams) {}
  std::pair<TensorPtr, TensorPtr> operator()(const std::vector<Eigen::Vector3d>& points,
                                             const std::vector<Eigen::Vector3d>& dirs) override;

 private:
  const RadianceNet* net_;
  const std::vector<TensorPtr>* volumes_;
  const std::vector<Camera>* cams_;
};

struct RaySampleBatch {
  int n_rays = 0;
  int n_samples = 0;
  std::vector<double> t;      // (R*S) ascending per ray
  std::vector<double> delta;  // (R*S), last = t_far - t_last
  std::vector<Eigen::Vector3d> points;
  TensorPtr sigma;  // (R,S)
  TensorPtr rgb;    // (R,S,3)
  CompositeResult comp;
};

struct RenderResult {
  RaySampleBatch coarse;
  RaySampleBatch fine;  // coarse+fine samples merged and sorted
};

// Two-stage render: stratified coarse pass, then importance samples drawn
// from the coarse weights merged into the fine pass. Per-ray RNG streams are
// forked from (rng, ray index) so results do not depend on evaluation order.
RenderResult render_rays(const std::vector<Ray>& rays, SampleEvaluator& coarse_eval,
                         SampleEvaluator& fine_eval, int n_coarse, int n_fine, Rng& rng,
                         const std::array<double, 3>& background);

}  // namespace colf
