#include "colf/field.hpp"

#include <cmath>
#include <stdexcept>

namespace colf {

int pos_encode_dim(int L) { return 3 + 6 * L; }

std::vector<double> pos_encode(const Eigen::Vector3d& x, int L, double omega) {
  if (L < 0 || !(omega > 0)) throw std::invalid_argument("pos_encode: need L >= 0 and omega > 0");
  std::vector<double> out;
  out.reserve(pos_encode_dim(L));
  for (int k = 0; k < 3; ++k) out.push_back(x[k]);
  double freq = omega;
  for (int l = 0; l < L; ++l, freq *= 2.0) {
    for (int k = 0; k < 3; ++k) out.push_back(std::sin(freq * x[k]));
    for (int k = 0; k < 3; ++k) out.push_back(std::cos(freq * x[k]));
  }
  return out;
}

TensorPtr encode_points_dirs(const std::vector<Eigen::Vector3d>& points,
                             const std::vector<Eigen::Vector3d>& dirs, int L, double omega) {
  if (points.size() != dirs.size())
    throw std::invalid_argument("encode_points_dirs: point/direction count mismatch");
  const int64_t b = static_cast<int64_t>(points.size());
  const int64_t cols = pos_encode_dim(L) + 3;
  std::vector<double> rows(static_cast<size_t>(b * cols));
  for (int64_t i = 0; i < b; ++i) {
    const auto enc = pos_encode(points[i], L, omega);
    double* dst = rows.data() + i * cols;
    std::copy(enc.begin(), enc.end(), dst);
    for (int k = 0; k < 3; ++k) dst[enc.size() + k] = dirs[i][k];
  }
  return constant({b, cols}, std::move(rows));
}

PixelFeatures gather_pixel_features(const std::vector<Eigen::Vector3d>& points,
                                    const std::vector<TensorPtr>& fused_volumes,
                                    const std::vector<Camera>& cameras) {
  if (fused_volumes.size() != cameras.size())
    throw std::invalid_argument("gather_pixel_features: volume/camera count mismatch");
  PixelFeatures out;
  const int64_t b = static_cast<int64_t>(points.size());
  for (size_t v = 0; v < cameras.size(); ++v) {
    const auto& vol = fused_volumes[v];
    if (vol->rank() != 3)
      throw std::invalid_argument("gather_pixel_features: volumes must be rank-3 (H,W,d)");
    const int64_t hv = vol->shape[0], wv = vol->shape[1];
    // Image pixel -> feature grid coordinate under the half-resolution stride.
    const double scale = 0.5;
    std::vector<int64_t> idx(static_cast<size_t>(b) * 4, -1);
    std::vector<double> wts(static_cast<size_t>(b) * 4, 0.0);
    std::vector<uint8_t> valid(static_cast<size_t>(b), 0);
    for (int64_t i = 0; i < b; ++i) {
      const auto proj = project(cameras[v], points[i]);
      PixelCoord px{0.0, 0.0};
      bool ok = false;
      if (proj) {
        px = proj->px;
        ok = px.u >= 0 && px.u <= cameras[v].width - 1 && px.v >= 0 && px.v <= cameras[v].height - 1;
      }
      const BilinearTap tap = bilinear_tap(hv, wv, px, scale);
      for (int k = 0; k < 4; ++k) {
        idx[i * 4 + k] = tap.idx[k];
        wts[i * 4 + k] = tap.w[k];
      }
      valid[i] = ok ? 1 : 0;
    }
    out.per_view.push_back(bilinear_gather(vol, std::move(idx), std::move(wts)));
    out.valid.push_back(std::move(valid));
  }
  return out;
}

RadianceNet::RadianceNet(ParamStore& store, const std::string& prefix, const FieldConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int64_t in_dim = pos_encode_dim(cfg.L) + 3;
  const int64_t w = cfg.width;
  in_w_ = store.create(prefix + "in.w", {in_dim, w}, in_dim, rng);
  in_b_ = store.create_zeros(prefix + "in.b", {w});
  feat_w_ = store.create(prefix + "feat.w", {cfg.d, w}, cfg.d, rng);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string bp = prefix + "block" + std::to_string(i) + ".";
    blocks_[i].w1 = store.create(bp + "w1", {w, w}, w, rng);
    blocks_[i].b1 = store.create_zeros(bp + "b1", {w});
    blocks_[i].w2 = store.create(bp + "w2", {w, w}, w, rng);
    blocks_[i].b2 = store.create_zeros(bp + "b2", {w});
  }
  rgb_w_ = store.create(prefix + "rgb.w", {w, 3}, w, rng);
  rgb_b_ = store.create_zeros(prefix + "rgb.b", {3});
  sigma_w_ = store.create(prefix + "sigma.w", {w, 1}, w, rng);
  sigma_b_ = store.create_zeros(prefix + "sigma.b", {1});
}

TensorPtr RadianceNet::block_pass(const Block& blk, const TensorPtr& h) const {
  auto z = linear(elu(h), blk.w1, blk.b1);
  z = linear(elu(z), blk.w2, blk.b2);
  return add(h, z);
}

RadianceNet::Output RadianceNet::forward(const TensorPtr& pos_dir,
                                         const std::vector<TensorPtr>& features) const {
  if (features.empty()) throw std::invalid_argument("radiance: need at least one view feature");
  const int64_t n = static_cast<int64_t>(features.size());
  const int64_t b = pos_dir->shape[0];
  for (const auto& f : features)
    if (f->rank() != 2 || f->shape[0] != b || f->shape[1] != cfg_.d)
      throw std::invalid_argument("radiance: feature shape " + shape_str(f->shape) +
                                  " does not match batch " + shape_str(pos_dir->shape));

  // The first three blocks share weights across views, so all views run as
  // one stacked batch. Stacking in content order keeps the post-rho result
  // bit-identical under any permutation of the inputs.
  TensorPtr feat_stack;
  TensorPtr base_rows = pos_dir;
  if (n > 1) {
    std::vector<TensorPtr> ordered;
    for (size_t i : canonical_order(features)) ordered.push_back(features[i]);
    feat_stack = concat_rows(ordered);
    std::vector<double> tiled;
    tiled.reserve(pos_dir->data.size() * static_cast<size_t>(n));
    for (int64_t v = 0; v < n; ++v)
      tiled.insert(tiled.end(), pos_dir->data.begin(), pos_dir->data.end());
    base_rows = constant({n * b, pos_dir->shape[1]}, std::move(tiled));
  } else {
    feat_stack = features[0];
  }

  auto h = add(linear(base_rows, in_w_, in_b_), matmul(feat_stack, feat_w_));
  for (int k = 0; k < 3; ++k) h = block_pass(blocks_[k], h);
  if (n > 1)
    h = mul_scalar(sum_axis(reshape(h, {n, b, static_cast<int64_t>(cfg_.width)}), 0),
                   1.0 / static_cast<double>(n));
  for (int k = 3; k < 5; ++k) h = block_pass(blocks_[k], h);
  auto trunk = elu(h);
  Output out;
  out.rgb = sigmoid(linear(trunk, rgb_w_, rgb_b_));
  out.sigma = softplus(linear(trunk, sigma_w_, sigma_b_));
  return out;
}

}  // namespace colf
