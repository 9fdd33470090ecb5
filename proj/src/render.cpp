#include "colf/render.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace colf {

std::vector<double> stratified_samples(double t_near, double t_far, int n_bins, Rng& rng) {
  if (n_bins < 1) throw std::invalid_argument("stratified_samples: need at least one bin");
  if (!(t_near < t_far)) throw std::invalid_argument("stratified_samples: t_near must be < t_far");
  std::vector<double> t(n_bins);
  const double h = (t_far - t_near) / n_bins;
  for (int i = 0; i < n_bins; ++i) t[i] = t_near + (i + rng.uniform01()) * h;
  return t;
}

std::vector<double> importance_samples(const std::vector<double>& weights,
                                       const std::vector<double>& coarse_t, double t_far, int n_fine,
                                       Rng& rng) {
  const size_t s = coarse_t.size();
  if (weights.size() != s || s < 1) throw std::invalid_argument("importance_samples: weight/t size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("importance_samples: negative weight");
    total += w;
  }
  const double floor = total > 0.0 ? 1e-2 * (total / static_cast<double>(s)) : 1.0;
  std::vector<double> cdf(s);
  double acc = 0.0;
  for (size_t i = 0; i < s; ++i) {
    acc += weights[i] + floor;
    cdf[i] = acc;
  }
  std::vector<double> out(static_cast<size_t>(n_fine));
  for (int k = 0; k < n_fine; ++k) {
    const double u = rng.uniform01() * acc;
    const size_t i = static_cast<size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const size_t seg = std::min(i, s - 1);
    const double lo = coarse_t[seg];
    const double hi = seg + 1 < s ? coarse_t[seg + 1] : t_far;
    const double mass = weights[seg] + floor;
    const double frac = mass > 0.0 ? (u - (cdf[seg] - mass)) / mass : 0.5;
    out[k] = lo + frac * std::max(hi - lo, 0.0);
  }
  return out;
}

namespace {

// Forward intermediates shared by the five composite output nodes.
struct CompositeCtx {
  int64_t rays, samples;
  std::vector<double> t, delta;
  std::array<double, 3> bg;
  std::vector<double> alpha;    // (R*S)
  std::vector<double> trans;    // (R*S): T_i before sample i
  std::vector<double> w;        // (R*S)
  std::vector<double> t_final;  // (R): residual transmittance
};

// d(loss)/d(sigma_i) for a functional sum_j G_j w_j + G_T T_final + gQ sum_j alpha_j:
//   delta_i * (G_i T_{i+1} - sum_{j>i} G_j w_j - G_T T_final + gQ (1-alpha_i)).
// G is evaluated lazily per sample by the caller.
template <typename GFn>
void accumulate_sigma_grad(const CompositeCtx& c, int64_t ray, GFn G, double G_T, double gQ,
                           double* sigma_grad) {
  const int64_t base = ray * c.samples;
  double suffix = 0.0;  // sum_{j>i} G_j w_j
  for (int64_t i = c.samples - 1; i >= 0; --i) {
    const int64_t k = base + i;
    const double t_next = c.trans[k] * (1.0 - c.alpha[k]);
    const double g = G(k);
    sigma_grad[k] += c.delta[k] * (g * t_next - suffix - G_T * c.t_final[ray] + gQ * (1.0 - c.alpha[k]));
    suffix += g * c.w[k];
  }
}

}  // namespace

CompositeResult composite(const TensorPtr& sigma, const TensorPtr& rgb, const std::vector<double>& t,
                          const std::vector<double>& delta, const std::array<double, 3>& background) {
  if (sigma->rank() != 2) throw std::invalid_argument("composite: sigma must be (R,S)");
  const int64_t rays = sigma->shape[0], samples = sigma->shape[1];
  if (rgb->shape != Shape{rays, samples, 3}) throw std::invalid_argument("composite: rgb must be (R,S,3)");
  if (static_cast<int64_t>(t.size()) != rays * samples || delta.size() != t.size())
    throw std::invalid_argument("composite: t/delta must have R*S entries");

  auto ctx = std::make_shared<CompositeCtx>();
  ctx->rays = rays;
  ctx->samples = samples;
  ctx->t = t;
  ctx->delta = delta;
  ctx->bg = background;
  ctx->alpha.resize(t.size());
  ctx->trans.resize(t.size());
  ctx->w.resize(t.size());
  ctx->t_final.resize(rays);

  std::vector<double> color(rays * 3, 0.0), depth(rays, 0.0), opacity(rays, 0.0), qdensity(rays, 0.0);
  for (int64_t r = 0; r < rays; ++r) {
    double T = 1.0;
    for (int64_t i = 0; i < samples; ++i) {
      const int64_t k = r * samples + i;
      const double a = -std::expm1(-sigma->data[k] * delta[k]);
      ctx->alpha[k] = a;
      ctx->trans[k] = T;
      const double w = T * a;
      ctx->w[k] = w;
      for (int c = 0; c < 3; ++c) color[r * 3 + c] += w * rgb->data[k * 3 + c];
      depth[r] += w * t[k];
      opacity[r] += w;
      qdensity[r] += a;
      T *= 1.0 - a;
    }
    ctx->t_final[r] = T;
    for (int c = 0; c < 3; ++c) color[r * 3 + c] += T * background[c];
  }

  CompositeResult res;
  res.color = make_node({rays, 3}, std::move(color), {sigma, rgb},
                        [sigma, rgb, ctx](Tensor& self) {
                          sigma->ensure_grad();
                          rgb->ensure_grad();
                          for (int64_t r = 0; r < ctx->rays; ++r) {
                            const double* gc = self.grad.data() + r * 3;
                            for (int64_t i = 0; i < ctx->samples; ++i) {
                              const int64_t k = r * ctx->samples + i;
                              for (int c = 0; c < 3; ++c) rgb->grad[k * 3 + c] += gc[c] * ctx->w[k];
                            }
                            const double g_t = gc[0] * ctx->bg[0] + gc[1] * ctx->bg[1] + gc[2] * ctx->bg[2];
                            accumulate_sigma_grad(
                                *ctx, r,
                                [&](int64_t k) {
                                  const double* cr = rgb->data.data() + k * 3;
                                  return gc[0] * cr[0] + gc[1] * cr[1] + gc[2] * cr[2];
                                },
                                g_t, 0.0, sigma->grad.data());
                          }
                        },
                        "composite_color");
  res.depth = make_node({rays, 1}, std::move(depth), {sigma},
                        [sigma, ctx](Tensor& self) {
                          sigma->ensure_grad();
                          for (int64_t r = 0; r < ctx->rays; ++r) {
                            const double gd = self.grad[r];
                            accumulate_sigma_grad(
                                *ctx, r, [&](int64_t k) { return gd * ctx->t[k]; }, 0.0, 0.0,
                                sigma->grad.data());
                          }
                        },
                        "composite_depth");
  res.opacity = make_node({rays, 1}, std::move(opacity), {sigma},
                          [sigma, ctx](Tensor& self) {
                            sigma->ensure_grad();
                            for (int64_t r = 0; r < ctx->rays; ++r) {
                              const double go = self.grad[r];
                              accumulate_sigma_grad(
                                  *ctx, r, [&](int64_t) { return go; }, 0.0, 0.0, sigma->grad.data());
                            }
                          },
                          "composite_opacity");
  res.qdensity = make_node({rays, 1}, std::move(qdensity), {sigma},
                           [sigma, ctx](Tensor& self) {
                             sigma->ensure_grad();
                             for (int64_t r = 0; r < ctx->rays; ++r) {
                               const double gq = self.grad[r];
                               accumulate_sigma_grad(
                                   *ctx, r, [&](int64_t) { return 0.0; }, 0.0, gq, sigma->grad.data());
                             }
                           },
                           "composite_qdensity");
  res.weights = make_node({rays, samples}, std::vector<double>(ctx->w), {sigma},
                          [sigma, ctx](Tensor& self) {
                            sigma->ensure_grad();
                            for (int64_t r = 0; r < ctx->rays; ++r)
                              accumulate_sigma_grad(
                                  *ctx, r, [&](int64_t k) { return self.grad[k]; }, 0.0, 0.0,
                                  sigma->grad.data());
                          },
                          "composite_weights");
  return res;
}

std::pair<TensorPtr, TensorPtr> OracleFieldEvaluator::operator()(
    const std::vector<Eigen::Vector3d>& points, const std::vector<Eigen::Vector3d>& dirs) {
  (void)dirs;
  const int64_t b = static_cast<int64_t>(points.size());
  std::vector<double> sigma(b), rgb(b * 3);
  for (int64_t i = 0; i < b; ++i) {
    const FieldSample s = field_eval(*field_, points[i]);
    sigma[i] = s.sigma;
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = s.rgb[c];
  }
  return {constant({b, 1}, std::move(sigma)), constant({b, 3}, std::move(rgb))};
}

std::pair<TensorPtr, TensorPtr> NeuralFieldEvaluator::operator()(
    const std::vector<Eigen::Vector3d>& points, const std::vector<Eigen::Vector3d>& dirs) {
  const auto& cfg = net_->config();
  auto pos_dir = encode_points_dirs(points, dirs, cfg.L, cfg.omega);
  auto feats = gather_pixel_features(points, *volumes_, *cams_);
  auto out = net_->forward(pos_dir, feats.per_view);
  return {out.sigma, out.rgb};
}

RenderResult render_rays(const std::vector<Ray>& rays, SampleEvaluator& coarse_eval,
                         SampleEvaluator& fine_eval, int n_coarse, int n_fine, Rng& rng,
                         const std::array<double, 3>& background) {
  const int64_t r = static_cast<int64_t>(rays.size());
  RenderResult out;

  auto run_pass = [&](RaySampleBatch& batch, SampleEvaluator& eval, int samples,
                      const std::function<std::vector<double>(int64_t)>& draw) {
    batch.n_rays = static_cast<int>(r);
    batch.n_samples = samples;
    batch.t.resize(r * samples);
    batch.delta.resize(r * samples);
    batch.points.resize(r * samples);
    std::vector<Eigen::Vector3d> dirs(r * samples);
    for (int64_t i = 0; i < r; ++i) {
      std::vector<double> t = draw(i);
      for (int s = 0; s < samples; ++s) {
        const int64_t k = i * samples + s;
        batch.t[k] = t[s];
        batch.delta[k] = (s + 1 < samples ? t[s + 1] : rays[i].t_far) - t[s];
        if (batch.delta[k] <= 0.0) batch.delta[k] = 1e-12;  // coincident merged samples
        batch.points[k] = rays[i].at(t[s]);
        dirs[k] = rays[i].dir;
      }
    }
    auto [sigma_flat, rgb_flat] = eval(batch.points, dirs);
    batch.sigma = reshape(sigma_flat, {r, samples});
    batch.rgb = reshape(rgb_flat, {r, samples, 3});
    batch.comp = composite(batch.sigma, batch.rgb, batch.t, batch.delta, background);
  };

  Rng coarse_rng = rng.fork(0x10c0a53ull);
  run_pass(out.coarse, coarse_eval, n_coarse, [&](int64_t i) {
    Rng s = coarse_rng.fork(static_cast<uint64_t>(i));
    return stratified_samples(rays[i].t_near, rays[i].t_far, n_coarse, s);
  });

  Rng fine_rng = rng.fork(0xf13eull);
  run_pass(out.fine, fine_eval, n_coarse + n_fine, [&](int64_t i) {
    Rng s = fine_rng.fork(static_cast<uint64_t>(i));
    std::vector<double> coarse_t(out.coarse.t.begin() + i * n_coarse,
                                 out.coarse.t.begin() + (i + 1) * n_coarse);
    std::vector<double> w(out.coarse.comp.weights->data.begin() + i * n_coarse,
                          out.coarse.comp.weights->data.begin() + (i + 1) * n_coarse);
    auto fine_t = importance_samples(w, coarse_t, rays[i].t_far, n_fine, s);
    fine_t.insert(fine_t.end(), coarse_t.begin(), coarse_t.end());
    std::sort(fine_t.begin(), fine_t.end());
    return fine_t;
  });
  return out;
}

}  // namespace colf
