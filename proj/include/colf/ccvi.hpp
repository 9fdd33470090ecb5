#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "colf/tensor.hpp"

namespace colf {

// Non-overlapping s x s core tiling of an (H, W) grid plus, per tile, a
// query/key context ring of `band` pixels per side. Context slots that fall
// outside the grid hold index -1 (read as zeros, masked out of attention).
// Edge tiles keep their smaller cores, padded to capacity with -1.
struct BlockPartition {
  int h = 0, w = 0, s = 0, band = 0;
  int64_t n_blocks = 0;
  int64_t core_cap = 0;              // s*s
  int64_t ctx_cap = 0;               // (s+2a)*(s+2a)
  std::vector<int64_t> core_idx;     // n_blocks * core_cap flat grid positions
  std::vector<int64_t> ctx_idx;      // n_blocks * ctx_cap
  std::vector<double> ctx_mask;      // 1 where ctx_idx >= 0
};

BlockPartition make_block_partition(int h, int w, int s, int band);

struct CcviConfig {
  int d = 32;
  int d_k = 32;
  int d_ff = 64;
  int patch = 5;  // s
  int band = 3;   // a
};

struct AvgiResult {
  TensorPtr out;      // (H*W, d): attended values scattered back to core positions
  TensorPtr weights;  // (n_blocks, core_cap, ctx_cap) softmax rows
};

// Collaborative fusion of N same-shape feature volumes. One parameter set is
// shared across anchor indices, so the module works for any view count and
// is exactly equivariant under permutations of the inputs.
class Ccvi {
 public:
  Ccvi(ParamStore& store, const CcviConfig& cfg, Rng& rng);

  // anchor = volumes[i]; auxiliary = sum of the rest (zero volume when N=1,
  // keeping single-view inference defined). Rank-3 (H,W,d) in and out.
  static std::pair<TensorPtr, TensorPtr> split_anchor_aux(const std::vector<TensorPtr>& volumes,
                                                          size_t i);

  // Channel-concat [anchor, aux] and reduce 2d -> d with the shared 1x1 conv.
  // Flat (H*W, d) tensors.
  TensorPtr fuse_aux(const TensorPtr& anchor_flat, const TensorPtr& aux_flat) const;

  // Attention guided by the fused volume: queries at core positions and keys
  // over the context ring both come from `fused_flat`, values from
  // `anchor_flat`. Each output position is a convex combination of value
  // rows over the valid context.
  AvgiResult avgi(const TensorPtr& anchor_flat, const TensorPtr& fused_flat,
                  const BlockPartition& part) const;

  // Full per-anchor transform: residual attention then residual FFN.
  std::vector<TensorPtr> forward(const std::vector<TensorPtr>& volumes) const;

  const CcviConfig& config() const { return cfg_; }
  const BlockPartition& partition_for(int h, int w) const;

 private:
  CcviConfig cfg_;
  TensorPtr reduce_w_, reduce_b_;
  TensorPtr wq_, wk_, wv_;
  TensorPtr ffn1_w_, ffn1_b_, ffn2_w_, ffn2_b_;
  mutable std::map<std::pair<int, int>, BlockPartition> partition_cache_;
};

}  // namespace colf
