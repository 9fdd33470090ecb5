#pragma once

#include <array>
#include <vector>

#include "colf/geometry.hpp"
#include "colf/image.hpp"
#include "colf/tensor.hpp"

namespace colf {

struct LossWeights {
  double lambda_geo = 1e-4;
  double lambda_app = 2e-4;
};

struct RayPair {
  int64_t ref = 0;
  int64_t adj = 0;
};

// Sum of squared L2 color errors over the batch.
TensorPtr loss_reconstruction(const TensorPtr& color, const std::vector<double>& ground_truth);

// 1 iff both cumulative densities reach tau (strict less-than excludes).
bool geometry_mask(double q_ref, double q_adj, double tau);

// Masked L1 between paired depths: sum over pairs of M * |D(ref) - D(adj)|.
// Pairs failing the mask contribute exactly zero value and gradient.
TensorPtr loss_geometry(const TensorPtr& depth, const std::vector<RayPair>& pairs,
                        const std::vector<double>& qdensity, double tau);

// Per-sample color labels from the epipolar projections of the samples into
// the source images: each point is projected into every view, bilinearly
// sampled where the projection lands in-bounds with positive depth, and
// averaged over the valid views. valid[k] is false when no view qualifies.
struct PseudoLabels {
  std::vector<double> labels;  // (R*S*3), zeros where invalid
  std::vector<uint8_t> valid;  // (R*S)
};
PseudoLabels build_pseudo_label(const std::vector<Eigen::Vector3d>& points,
                                const std::vector<Image>& source_images,
                                const std::vector<Camera>& source_cams);

// Per ray and channel, both sides are turned into distributions over the
// valid samples, p_j = (c_j + eps_c) / sum_k (c_k + eps_c), and the KL
// divergence sum p log(p/q) is taken with the label side as p and the
// rendered side as q (clamped to >= 1e-8 inside the log). Channels are
// averaged, rays summed; rays with no valid sample are skipped.
TensorPtr loss_appearance(const TensorPtr& rgb_samples, const PseudoLabels& labels, double eps_c = 1e-3);

// L_rec + lambda1 L_geo + lambda2 L_app.
TensorPtr loss_total(const TensorPtr& rec, const TensorPtr& geo, const TensorPtr& app,
                     const LossWeights& w);

// Rowwise masked normalizer behind the appearance distributions: out = m*x /
// sum_s(m*x) per (ray, channel), all-zero rows stay zero.
TensorPtr masked_normalize(const TensorPtr& x, const TensorPtr& mask);

}  // namespace colf
