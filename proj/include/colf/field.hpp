#pragma once

#include <array>
#include <string>
#include <vector>

#include "colf/geometry.hpp"
#include "colf/tensor.hpp"

namespace colf {

// Sinusoidal lifting of a 3-vector: [x, sin(2^0 w x), cos(2^0 w x), ...,
// sin(2^{L-1} w x), cos(2^{L-1} w x)] applied per coordinate, grouped as
// identity(3) then per-octave sin(3), cos(3). Length 3 + 6L.
// View directions are never encoded; they enter the network raw.
std::vector<double> pos_encode(const Eigen::Vector3d& x, int L, double omega);

int pos_encode_dim(int L);

// Projects a world point into every source view and bilinearly samples the
// fused feature grids (feature coordinates are image pixels scaled by the
// grid stride). Border-clamped values are returned even when the projection
// leaves the image or the point sits behind a camera; `valid` reports which
// views were trustworthy. Conditioning uses the value regardless; only the
// supervision-side masks consume the flags.
struct PixelFeatures {
  std::vector<TensorPtr> per_view;  // each (B, d), graph-connected to the volumes
  std::vector<std::vector<uint8_t>> valid;
};
PixelFeatures gather_pixel_features(const std::vector<Eigen::Vector3d>& points,
                                    const std::vector<TensorPtr>& fused_volumes,
                                    const std::vector<Camera>& cameras);

struct FieldConfig {
  int L = 6;
  double omega = 1.5;
  int width = 64;  // hidden width of the fully-connected blocks
  int d = 32;      // per-view feature dimension
};

// Five residual fully-connected blocks (2 linears + ELU, pre-activation
// skip). Blocks 1-3 run per view with the view's pixel feature injected at
// the input adapter; hidden states are averaged over views after block 3;
// blocks 4-5 run once. Heads: sigmoid -> rgb, softplus -> sigma.
class RadianceNet {
 public:
  RadianceNet(ParamStore& store, const std::string& prefix, const FieldConfig& cfg, Rng& rng);

  struct Output {
    TensorPtr rgb;    // (B, 3) in (0,1)
    TensorPtr sigma;  // (B, 1) >= 0
  };
  // pos_dir: (B, 3+6L+3) constant rows [pos_encode(x) | d]; features: one
  // (B, d) tensor per source view.
  Output forward(const TensorPtr& pos_dir, const std::vector<TensorPtr>& features) const;

  const FieldConfig& config() const { return cfg_; }

 private:
  struct Block {
    TensorPtr w1, b1, w2, b2;
  };
  TensorPtr block_pass(const Block& blk, const TensorPtr& h) const;

  FieldConfig cfg_;
  TensorPtr in_w_, in_b_;    // (3+6L+3) -> width
  TensorPtr feat_w_;         // d -> width
  std::array<Block, 5> blocks_;
  TensorPtr rgb_w_, rgb_b_, sigma_w_, sigma_b_;
};

// Assembles the constant network input rows for a batch of samples.
TensorPtr encode_points_dirs(const std::vector<Eigen::Vector3d>& points,
                             const std::vector<Eigen::Vector3d>& dirs, int L, double omega);

}  // namespace colf
