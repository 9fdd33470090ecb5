#include "colf/ccvi.hpp"

#include <cmath>
#include <stdexcept>

namespace colf {

BlockPartition make_block_partition(int h, int w, int s, int band) {
  if (s < 1) throw std::invalid_argument("block partition: patch size must be >= 1");
  if (band < 0) throw std::invalid_argument("block partition: band must be >= 0");
  BlockPartition p;
  p.h = h;
  p.w = w;
  p.s = s;
  p.band = band;
  const int by = (h + s - 1) / s;
  const int bx = (w + s - 1) / s;
  p.n_blocks = static_cast<int64_t>(by) * bx;
  p.core_cap = static_cast<int64_t>(s) * s;
  const int ctx_side = s + 2 * band;
  p.ctx_cap = static_cast<int64_t>(ctx_side) * ctx_side;
  p.core_idx.assign(p.n_blocks * p.core_cap, -1);
  p.ctx_idx.assign(p.n_blocks * p.ctx_cap, -1);
  p.ctx_mask.assign(p.n_blocks * p.ctx_cap, 0.0);

  int64_t blk = 0;
  for (int ty = 0; ty < by; ++ty) {
    for (int tx = 0; tx < bx; ++tx, ++blk) {
      const int y0 = ty * s, x0 = tx * s;
      int64_t* core = p.core_idx.data() + blk * p.core_cap;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          const int y = y0 + dy, x = x0 + dx;
          if (y < h && x < w) core[dy * s + dx] = static_cast<int64_t>(y) * w + x;
        }
      int64_t* ctx = p.ctx_idx.data() + blk * p.ctx_cap;
      double* mask = p.ctx_mask.data() + blk * p.ctx_cap;
      for (int dy = 0; dy < ctx_side; ++dy)
        for (int dx = 0; dx < ctx_side; ++dx) {
          const int y = y0 - band + dy, x = x0 - band + dx;
          if (y >= 0 && y < h && x >= 0 && x < w) {
            ctx[dy * ctx_side + dx] = static_cast<int64_t>(y) * w + x;
            mask[dy * ctx_side + dx] = 1.0;
          }
        }
    }
  }
  return p;
}

Ccvi::Ccvi(ParamStore& store, const CcviConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d < 1 || cfg.d_k < 1 || cfg.d_ff < 1)
    throw std::invalid_argument("Ccvi: channel dimensions must be positive");
  const int64_t d = cfg.d;
  reduce_w_ = store.create("ccvi.reduce.w", {2 * d, d}, 2 * d, rng);
  reduce_b_ = store.create_zeros("ccvi.reduce.b", {d});
  wq_ = store.create("ccvi.attn.wq", {d, cfg.d_k}, d, rng);
  wk_ = store.create("ccvi.attn.wk", {d, cfg.d_k}, d, rng);
  wv_ = store.create("ccvi.attn.wv", {d, d}, d, rng);
  ffn1_w_ = store.create("ccvi.ffn1.w", {d, cfg.d_ff}, d, rng);
  ffn1_b_ = store.create_zeros("ccvi.ffn1.b", {cfg.d_ff});
  ffn2_w_ = store.create("ccvi.ffn2.w", {cfg.d_ff, d}, cfg.d_ff, rng);
  ffn2_b_ = store.create_zeros("ccvi.ffn2.b", {d});
}

const BlockPartition& Ccvi::partition_for(int h, int w) const {
  auto it = partition_cache_.find({h, w});
  if (it == partition_cache_.end())
    it = partition_cache_.emplace(std::make_pair(h, w), make_block_partition(h, w, cfg_.patch, cfg_.band))
             .first;
  return it->second;
}

std::pair<TensorPtr, TensorPtr> Ccvi::split_anchor_aux(const std::vector<TensorPtr>& volumes, size_t i) {
  if (volumes.empty()) throw std::invalid_argument("split_anchor_aux: empty volume list");
  if (i >= volumes.size()) throw std::invalid_argument("split_anchor_aux: anchor index out of range");
  for (const auto& v : volumes)
    if (v->shape != volumes[0]->shape)
      throw std::invalid_argument("split_anchor_aux: volume shapes differ: " + shape_str(volumes[0]->shape) +
                                  " vs " + shape_str(v->shape));
  TensorPtr anchor = volumes[i];
  std::vector<TensorPtr> others;
  for (size_t j = 0; j < volumes.size(); ++j)
    if (j != i) others.push_back(volumes[j]);
  if (others.empty()) return {anchor, zeros(anchor->shape)};
  return {anchor, add_many_canonical(std::move(others))};
}

TensorPtr Ccvi::fuse_aux(const TensorPtr& anchor_flat, const TensorPtr& aux_flat) const {
  if (anchor_flat->shape != aux_flat->shape)
    throw std::invalid_argument("fuse_aux: anchor/aux shapes differ");
  return linear(concat_last(anchor_flat, aux_flat), reduce_w_, reduce_b_);
}

AvgiResult Ccvi::avgi(const TensorPtr& anchor_flat, const TensorPtr& fused_flat,
                      const BlockPartition& part) const {
  const int64_t d = cfg_.d;
  const int64_t dk = cfg_.d_k;
  const int64_t cells = static_cast<int64_t>(part.h) * part.w;
  if (anchor_flat->rank() != 2 || anchor_flat->shape[0] != cells || anchor_flat->shape[1] != d)
    throw std::invalid_argument("avgi: anchor shape " + shape_str(anchor_flat->shape) +
                                " does not match partition " + std::to_string(part.h) + "x" +
                                std::to_string(part.w));

  auto q_rows = gather_rows(fused_flat, std::vector<int64_t>(part.core_idx));
  auto k_rows = gather_rows(fused_flat, std::vector<int64_t>(part.ctx_idx));
  auto v_rows = gather_rows(anchor_flat, std::vector<int64_t>(part.ctx_idx));

  auto q = reshape(matmul(q_rows, wq_), {part.n_blocks, part.core_cap, dk});
  auto k = reshape(matmul(k_rows, wk_), {part.n_blocks, part.ctx_cap, dk});
  auto v = reshape(matmul(v_rows, wv_), {part.n_blocks, part.ctx_cap, d});

  auto logits = mul_scalar(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
  auto mask = constant({part.n_blocks, part.ctx_cap}, part.ctx_mask);
  AvgiResult r;
  r.weights = masked_softmax_last(logits, mask);
  auto attended = reshape(bmm(r.weights, v), {part.n_blocks * part.core_cap, d});
  r.out = scatter_rows(attended, std::vector<int64_t>(part.core_idx), cells);
  return r;
}

std::vector<TensorPtr> Ccvi::forward(const std::vector<TensorPtr>& volumes) const {
  if (volumes.empty()) throw std::invalid_argument("ccvi: empty volume list");
  const auto& shape = volumes[0]->shape;
  if (shape.size() != 3 || shape[2] != cfg_.d)
    throw std::invalid_argument("ccvi: expected (H,W," + std::to_string(cfg_.d) + ") volumes, got " +
                                shape_str(shape));
  const int h = static_cast<int>(shape[0]);
  const int w = static_cast<int>(shape[1]);
  const int64_t cells = static_cast<int64_t>(h) * w;
  const BlockPartition& part = partition_for(h, w);

  std::vector<TensorPtr> fused;
  fused.reserve(volumes.size());
  for (size_t i = 0; i < volumes.size(); ++i) {
    auto [anchor, aux] = split_anchor_aux(volumes, i);
    auto anchor_flat = reshape(anchor, {cells, cfg_.d});
    auto aux_flat = reshape(aux, {cells, cfg_.d});
    auto guide = fuse_aux(anchor_flat, aux_flat);
    auto attn = avgi(anchor_flat, guide, part);
    auto hidden = add(attn.out, anchor_flat);
    auto ffn = linear(elu(linear(hidden, ffn1_w_, ffn1_b_)), ffn2_w_, ffn2_b_);
    fused.push_back(reshape(add(ffn, hidden), shape));
  }
  return fused;
}

}  // namespace colf
