#include "colf/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace colf {

TensorPtr loss_reconstruction(const TensorPtr& color, const std::vector<double>& ground_truth) {
  if (color->data.size() != ground_truth.size())
    throw std::invalid_argument("loss_reconstruction: rendered/ground-truth counts differ");
  auto diff = sub(color, constant(color->shape, ground_truth));
  return sum_all(mul(diff, diff));
}

bool geometry_mask(double q_ref, double q_adj, double tau) { return !(q_ref < tau || q_adj < tau); }

TensorPtr loss_geometry(const TensorPtr& depth, const std::vector<RayPair>& pairs,
                        const std::vector<double>& qdensity, double tau) {
  if (pairs.empty()) return scalar_tensor(0.0);
  std::vector<int64_t> ref_idx, adj_idx;
  std::vector<double> mask;
  for (const auto& p : pairs) {
    ref_idx.push_back(p.ref);
    adj_idx.push_back(p.adj);
    mask.push_back(geometry_mask(qdensity.at(p.ref), qdensity.at(p.adj), tau) ? 1.0 : 0.0);
  }
  auto d_ref = gather_rows(depth, std::move(ref_idx));
  auto d_adj = gather_rows(depth, std::move(adj_idx));
  auto gap = abs_(sub(d_ref, d_adj));
  return sum_all(mul(gap, constant(gap->shape, std::move(mask))));
}

PseudoLabels build_pseudo_label(const std::vector<Eigen::Vector3d>& points,
                                const std::vector<Image>& source_images,
                                const std::vector<Camera>& source_cams) {
  if (source_images.size() != source_cams.size())
    throw std::invalid_argument("build_pseudo_label: image/camera count mismatch");
  PseudoLabels out;
  out.labels.assign(points.size() * 3, 0.0);
  out.valid.assign(points.size(), 0);
  for (size_t k = 0; k < points.size(); ++k) {
    double acc[3] = {0, 0, 0};
    int n_valid = 0;
    for (size_t v = 0; v < source_cams.size(); ++v) {
      const Camera& cam = source_cams[v];
      const auto proj = project(cam, points[k]);
      if (!proj) continue;
      if (proj->px.u < 0 || proj->px.u > cam.width - 1 || proj->px.v < 0 || proj->px.v > cam.height - 1)
        continue;
      const auto s = bilinear(source_images[v].view(), proj->px, 1.0);
      for (int c = 0; c < 3; ++c) acc[c] += s.value[c];
      ++n_valid;
    }
    if (n_valid > 0) {
      out.valid[k] = 1;
      for (int c = 0; c < 3; ++c) out.labels[k * 3 + c] = acc[c] / n_valid;
    }
  }
  return out;
}

TensorPtr masked_normalize(const TensorPtr& x, const TensorPtr& mask) {
  if (x->rank() != 3) throw std::invalid_argument("masked_normalize: x must be (R,S,C)");
  const int64_t rays = x->shape[0], samples = x->shape[1], ch = x->shape[2];
  if (mask->shape != Shape{rays, samples})
    throw std::invalid_argument("masked_normalize: mask must be (R,S), got " + shape_str(mask->shape));

  std::vector<double> out(x->data.size(), 0.0);
  std::vector<double> denom(static_cast<size_t>(rays * ch), 0.0);
  for (int64_t r = 0; r < rays; ++r)
    for (int64_t s = 0; s < samples; ++s) {
      const double m = mask->data[r * samples + s];
      if (m == 0.0) continue;
      for (int64_t c = 0; c < ch; ++c) denom[r * ch + c] += m * x->data[(r * samples + s) * ch + c];
    }
  for (int64_t r = 0; r < rays; ++r)
    for (int64_t s = 0; s < samples; ++s) {
      const double m = mask->data[r * samples + s];
      if (m == 0.0) continue;
      for (int64_t c = 0; c < ch; ++c) {
        const double d = denom[r * ch + c];
        if (d > 0.0) out[(r * samples + s) * ch + c] = m * x->data[(r * samples + s) * ch + c] / d;
      }
    }
  auto denom_ptr = std::make_shared<std::vector<double>>(std::move(denom));
  return make_node(x->shape, std::move(out), {x, mask},
                   [x, mask, denom_ptr, rays, samples, ch](Tensor& self) {
                     x->ensure_grad();
                     for (int64_t r = 0; r < rays; ++r)
                       for (int64_t c = 0; c < ch; ++c) {
                         const double d = (*denom_ptr)[r * ch + c];
                         if (d <= 0.0) continue;
                         double dot = 0.0;
                         for (int64_t s = 0; s < samples; ++s) {
                           const int64_t k = (r * samples + s) * ch + c;
                           dot += self.grad[k] * self.data[k];
                         }
                         for (int64_t s = 0; s < samples; ++s) {
                           const double m = mask->data[r * samples + s];
                           if (m == 0.0) continue;
                           const int64_t k = (r * samples + s) * ch + c;
                           x->grad[k] += m / d * (self.grad[k] - dot);
                         }
                       }
                   },
                   "masked_normalize");
}

TensorPtr loss_appearance(const TensorPtr& rgb_samples, const PseudoLabels& labels, double eps_c) {
  if (rgb_samples->rank() != 3 || rgb_samples->shape[2] != 3)
    throw std::invalid_argument("loss_appearance: rgb_samples must be (R,S,3)");
  const int64_t rays = rgb_samples->shape[0], samples = rgb_samples->shape[1];
  if (labels.valid.size() != static_cast<size_t>(rays * samples) ||
      labels.labels.size() != static_cast<size_t>(rays * samples * 3))
    throw std::invalid_argument("loss_appearance: label extents do not match the sample batch");

  std::vector<double> mask_data(labels.valid.begin(), labels.valid.end());
  auto mask = constant({rays, samples}, std::move(mask_data));

  // Both sides run through the same normalizer so identical colors give an
  // exact zero.
  auto label_tensor = constant(rgb_samples->shape, labels.labels);
  auto p = masked_normalize(add_scalar(label_tensor, eps_c), mask);
  auto q = masked_normalize(add_scalar(rgb_samples, eps_c), mask);

  constexpr double kLogFloor = 1e-8;
  double p_log_p = 0.0;
  for (size_t i = 0; i < p->data.size(); ++i)
    if (p->data[i] > 0.0) p_log_p += p->data[i] * std::log(std::max(p->data[i], kLogFloor));

  auto p_log_q = sum_all(mul(p, log_(q, kLogFloor)));
  auto kl = add_scalar(mul_scalar(p_log_q, -1.0 / 3.0), p_log_p * (1.0 / 3.0));
  // KL is nonnegative; the relu floors rounding noise when p == q.
  return relu(kl);
}

TensorPtr loss_total(const TensorPtr& rec, const TensorPtr& geo, const TensorPtr& app,
                     const LossWeights& w) {
  if (w.lambda_geo < 0 || w.lambda_app < 0)
    throw std::invalid_argument("loss_total: loss weights must be nonnegative");
  return add(rec, add(mul_scalar(geo, w.lambda_geo), mul_scalar(app, w.lambda_app)));
}

}  // namespace colf
