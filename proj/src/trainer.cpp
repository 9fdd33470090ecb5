#include "colf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "colf/checkpoint.hpp"
#include "colf/metrics.hpp"

namespace colf {

Ablation ablation_from_string(const std::string& s) {
  if (s == "baseline") return Ablation::Baseline;
  if (s == "vi") return Ablation::Vi;
  if (s == "vi-geo") return Ablation::ViGeo;
  if (s == "vi-app") return Ablation::ViApp;
  if (s == "full") return Ablation::Full;
  throw std::invalid_argument("unknown ablation '" + s + "' (baseline|vi|vi-geo|vi-app|full)");
}

std::string ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::Baseline: return "baseline";
    case Ablation::Vi: return "vi";
    case Ablation::ViGeo: return "vi-geo";
    case Ablation::ViApp: return "vi-app";
    case Ablation::Full: return "full";
  }
  return "full";
}

void TrainConfig::validate() const {
  if (random_rays + neighbor_rays != rays_per_iter)
    throw std::invalid_argument("config: random_rays + neighbor_rays must equal rays_per_iter");
  if (reference_rays != neighbor_rays)
    throw std::invalid_argument("config: each reference ray pairs with exactly one neighbor ray");
  if (reference_rays > random_rays)
    throw std::invalid_argument("config: reference rays are drawn from the random-ray tail");
  if (random_rays < 1 || reference_rays < 1 || max_offset < 1 || batch_scenes < 1 ||
      n_source_views < 1 || n_coarse < 1 || n_fine < 1)
    throw std::invalid_argument("config: counts must be >= 1");
  if (weights.lambda_geo < 0 || weights.lambda_app < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
}

LossWeights TrainConfig::effective_weights() const {
  switch (ablation) {
    case Ablation::Baseline:
    case Ablation::Vi: return {0.0, 0.0};
    case Ablation::ViGeo: return {weights.lambda_geo, 0.0};
    case Ablation::ViApp: return {0.0, weights.lambda_app};
    case Ablation::Full: return weights;
  }
  return weights;
}

Model::Model(const TrainConfig& c) : cfg(c) {
  Rng init_rng(Rng::mix(cfg.seed, 0x1e17ull));
  encoder = std::make_unique<Encoder>(store, cfg.d, init_rng);
  CcviConfig cc{cfg.d, cfg.d_k, cfg.d_ff, cfg.patch, cfg.band};
  ccvi = std::make_unique<Ccvi>(store, cc, init_rng);
  FieldConfig fc{cfg.L, cfg.omega, cfg.w_mlp, cfg.d};
  coarse_field = std::make_unique<RadianceNet>(store, "field.coarse.", fc, init_rng);
  fine_field = std::make_unique<RadianceNet>(store, "field.fine.", fc, init_rng);
}

Trainer::Trainer(std::vector<SceneDataset> scenes, const TrainConfig& cfg)
    : cfg_(cfg), scenes_(std::move(scenes)) {
  tune_allocator_for_tensors();
  cfg_.validate();
  if (scenes_.empty()) throw std::invalid_argument("trainer: need at least one scene");
  for (const auto& s : scenes_)
    if (static_cast<int>(s.cameras.size()) <= cfg_.n_source_views)
      throw std::invalid_argument("trainer: a scene has no target views beyond the first " +
                                  std::to_string(cfg_.n_source_views) + " source views");
  model_ = std::make_unique<Model>(cfg_);
  // Guard encoder extents when every scene shares one image size.
  bool uniform = true;
  for (const auto& s : scenes_)
    if (s.cameras[0].width != scenes_[0].cameras[0].width ||
        s.cameras[0].height != scenes_[0].cameras[0].height)
      uniform = false;
  if (uniform)
    model_->encoder->set_expected_extents(scenes_[0].cameras[0].width, scenes_[0].cameras[0].height);
  opt_.lr = cfg_.learning_rate;
  opt_.bind(model_->store);
}

size_t Trainer::scene_index_for_iter(uint64_t seed, int64_t iter, size_t n_scenes) {
  Rng r(Rng::mix(seed ^ 0x5ce4eull, static_cast<uint64_t>(iter)));
  return static_cast<size_t>(r.uniform_int(n_scenes));
}

RayBatch Trainer::sample_ray_batch(const SceneDataset& scene, Rng& rng) const {
  RayBatch batch;
  const size_t n_targets = scene.cameras.size() - cfg_.n_source_views;
  batch.target_view = cfg_.n_source_views + rng.uniform_int(n_targets);
  const Camera& cam = scene.cameras[batch.target_view];
  const Image& gt_img = scene.images[batch.target_view];

  batch.rays.reserve(cfg_.rays_per_iter);
  batch.pixels.reserve(cfg_.rays_per_iter);
  batch.ground_truth.reserve(cfg_.rays_per_iter * 3);
  auto push_pixel = [&](const PixelCoord& px) {
    batch.pixels.push_back(px);
    batch.rays.push_back(ray_for_pixel(cam, px, scene.near, scene.far));
    const double* c = gt_img.at(static_cast<int>(px.v), static_cast<int>(px.u));
    batch.ground_truth.insert(batch.ground_truth.end(), c, c + 3);
  };

  for (int i = 0; i < cfg_.random_rays; ++i) {
    const PixelCoord px{static_cast<double>(rng.uniform_int(cam.width)),
                        static_cast<double>(rng.uniform_int(cam.height))};
    push_pixel(px);
  }
  // The last reference_rays of the random block pair with fresh adjacent
  // rays appended behind them.
  const int first_ref = cfg_.random_rays - cfg_.reference_rays;
  for (int i = 0; i < cfg_.reference_rays; ++i) {
    const int ref = first_ref + i;
    const AdjacentRay adj = adjacent_ray(batch.rays[ref], batch.pixels[ref], cam, cfg_.max_offset, rng);
    batch.pairs.push_back({ref, static_cast<int64_t>(batch.rays.size())});
    push_pixel(adj.px);
  }
  return batch;
}

std::vector<TensorPtr> Trainer::fused_volumes(const SceneDataset& scene) const {
  std::vector<TensorPtr> vols;
  for (int v = 0; v < cfg_.n_source_views; ++v) vols.push_back(model_->encoder->encode(scene.images[v]));
  if (!cfg_.use_ccvi()) return vols;  // mean-fusion baseline consumes raw volumes
  return model_->ccvi->forward(vols);
}

Trainer::SceneTermNodes Trainer::step_scene(const SceneDataset& scene, Rng& rng) {
  const LossWeights w = cfg_.effective_weights();
  std::vector<Camera> src_cams(scene.cameras.begin(), scene.cameras.begin() + cfg_.n_source_views);
  std::vector<Image> src_imgs(scene.images.begin(), scene.images.begin() + cfg_.n_source_views);
  auto fused = fused_volumes(scene);

  Rng batch_rng = rng.fork(0xba7c4ull);
  RayBatch batch = sample_ray_batch(scene, batch_rng);

  NeuralFieldEvaluator coarse_eval(*model_->coarse_field, fused, src_cams);
  NeuralFieldEvaluator fine_eval(*model_->fine_field, fused, src_cams);
  Rng render_rng = rng.fork(0x4e4d34ull);
  RenderResult rr = render_rays(batch.rays, coarse_eval, fine_eval, cfg_.n_coarse, cfg_.n_fine,
                                render_rng, scene.background);

  SceneTermNodes nodes;
  nodes.rec = add(loss_reconstruction(rr.coarse.comp.color, batch.ground_truth),
                  loss_reconstruction(rr.fine.comp.color, batch.ground_truth));
  nodes.geo = w.lambda_geo > 0
                  ? loss_geometry(rr.fine.comp.depth, batch.pairs, rr.fine.comp.qdensity->data, cfg_.tau)
                  : scalar_tensor(0.0);
  nodes.app = w.lambda_app > 0
                  ? loss_appearance(rr.fine.rgb, build_pseudo_label(rr.fine.points, src_imgs, src_cams),
                                    cfg_.eps_c)
                  : scalar_tensor(0.0);
  return nodes;
}

StepStats Trainer::train_step() {
  Tape tape;
  Rng iter_rng(Rng::mix(cfg_.seed, static_cast<uint64_t>(iter_)));

  TensorPtr rec, geo, app;
  for (int b = 0; b < cfg_.batch_scenes; ++b) {
    const size_t scene_idx =
        scene_index_for_iter(cfg_.seed + static_cast<uint64_t>(b) * 0x9d5ull, iter_, scenes_.size());
    Rng scene_rng = iter_rng.fork(0xb000ull + static_cast<uint64_t>(b));
    auto terms = step_scene(scenes_[scene_idx], scene_rng);
    rec = rec ? add(rec, terms.rec) : terms.rec;
    geo = geo ? add(geo, terms.geo) : terms.geo;
    app = app ? add(app, terms.app) : terms.app;
  }
  TensorPtr total = loss_total(rec, geo, app, cfg_.effective_weights());

  StepStats stats;
  stats.rec = rec->scalar();
  stats.geo = geo->scalar();
  stats.app = app->scalar();
  stats.total = total->scalar();
  const struct {
    const char* name;
    double v;
  } term_checks[] = {{"reconstruction", stats.rec}, {"geometry", stats.geo}, {"appearance", stats.app},
                     {"total", stats.total}};
  for (const auto& t : term_checks)
    if (!std::isfinite(t.v))
      throw std::runtime_error("train_step: non-finite " + std::string(t.name) + " loss at iteration " +
                               std::to_string(iter_));

  model_->store.zero_grads();
  tape.backward(total);
  stats.grad_norm = model_->store.grad_norm();
  opt_.step(model_->store, cfg_.grad_clip);
  ++iter_;
  return stats;
}

std::pair<Image, DepthMap> Trainer::render_view(size_t scene_idx, size_t view_idx, int ray_chunk) {
  const SceneDataset& scene = scenes_.at(scene_idx);
  const Camera& cam = scene.cameras.at(view_idx);
  std::vector<Camera> src_cams(scene.cameras.begin(), scene.cameras.begin() + cfg_.n_source_views);

  auto fused = fused_volumes(scene);
  NeuralFieldEvaluator coarse_eval(*model_->coarse_field, fused, src_cams);
  NeuralFieldEvaluator fine_eval(*model_->fine_field, fused, src_cams);

  Image img = Image::filled(cam.width, cam.height, 0, 0, 0);
  DepthMap depth;
  depth.width = cam.width;
  depth.height = cam.height;
  depth.depth.assign(static_cast<size_t>(cam.width) * cam.height, 0.0);

  std::vector<Ray> rays;
  std::vector<size_t> flat;
  rays.reserve(ray_chunk);
  flat.reserve(ray_chunk);
  Rng view_rng(Rng::mix(cfg_.seed ^ 0xe7a1ull, view_idx));
  size_t chunk_id = 0;
  auto flush = [&]() {
    if (rays.empty()) return;
    Rng chunk_rng = view_rng.fork(chunk_id++);
    RenderResult rr = render_rays(rays, coarse_eval, fine_eval, cfg_.n_coarse, cfg_.n_fine, chunk_rng,
                                  scene.background);
    for (size_t i = 0; i < rays.size(); ++i) {
      for (int c = 0; c < 3; ++c) img.rgb[flat[i] * 3 + c] = rr.fine.comp.color->data[i * 3 + c];
      depth.depth[flat[i]] = rr.fine.comp.depth->data[i];
    }
    rays.clear();
    flat.clear();
  };
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      rays.push_back(ray_for_pixel(cam, {static_cast<double>(x), static_cast<double>(y)}, scene.near,
                                   scene.far));
      flat.push_back(static_cast<size_t>(y) * cam.width + x);
      if (static_cast<int>(rays.size()) >= ray_chunk) flush();
    }
  flush();
  return {std::move(img), std::move(depth)};
}

double Trainer::eval_psnr(size_t scene_idx, int max_views) {
  const SceneDataset& scene = scenes_.at(scene_idx);
  double total = 0.0;
  int n = 0;
  for (size_t v = cfg_.n_source_views; v < scene.cameras.size() && n < max_views; ++v, ++n) {
    auto [img, depth] = render_view(scene_idx, v);
    total += psnr(img, scene.images[v]);
  }
  return n ? total / n : 0.0;
}

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointMap ckpt;
  store_to_checkpoint(model_->store, ckpt);
  auto put1 = [&](const std::string& name, double v) { ckpt[name] = {{1}, {v}}; };
  put1("state.iter", static_cast<double>(iter_));
  put1("state.adam.step", static_cast<double>(opt_.step_count()));
  put1("state.seed", static_cast<double>(cfg_.seed));
  put1("config.d", cfg_.d);
  put1("config.d_k", cfg_.d_k);
  put1("config.d_ff", cfg_.d_ff);
  put1("config.patch", cfg_.patch);
  put1("config.band", cfg_.band);
  put1("config.w_mlp", cfg_.w_mlp);
  put1("config.L", cfg_.L);
  put1("config.omega", cfg_.omega);
  put1("config.n_source_views", cfg_.n_source_views);
  const auto& m = opt_.moments_m();
  const auto& v = opt_.moments_v();
  for (size_t i = 0; i < model_->store.count(); ++i) {
    const auto& name = model_->store.names()[i];
    const auto& shape = model_->store.tensors()[i]->shape;
    ckpt["state.adam.m." + name] = {shape, m[i]};
    ckpt["state.adam.v." + name] = {shape, v[i]};
  }
  write_checkpoint(path, ckpt);
}

Trainer Trainer::from_checkpoint(const std::string& path, std::vector<SceneDataset> scenes,
                                 TrainConfig cfg) {
  CheckpointMap ckpt = read_checkpoint(path);
  auto get1 = [&](const std::string& name) {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) throw std::runtime_error("checkpoint: missing entry " + name + " in " + path);
    return it->second.data.at(0);
  };
  cfg.d = static_cast<int>(get1("config.d"));
  cfg.d_k = static_cast<int>(get1("config.d_k"));
  cfg.d_ff = static_cast<int>(get1("config.d_ff"));
  cfg.patch = static_cast<int>(get1("config.patch"));
  cfg.band = static_cast<int>(get1("config.band"));
  cfg.w_mlp = static_cast<int>(get1("config.w_mlp"));
  cfg.L = static_cast<int>(get1("config.L"));
  cfg.omega = get1("config.omega");
  if (ckpt.count("config.n_source_views"))
    cfg.n_source_views = static_cast<int>(get1("config.n_source_views"));

  Trainer t(std::move(scenes), cfg);
  checkpoint_to_store(ckpt, t.model_->store);
  t.iter_ = static_cast<int64_t>(get1("state.iter"));
  t.opt_.set_step_count(static_cast<int64_t>(get1("state.adam.step")));
  for (size_t i = 0; i < t.model_->store.count(); ++i) {
    const auto& name = t.model_->store.names()[i];
    const auto& shape = t.model_->store.tensors()[i]->shape;
    for (auto [key, dst] : {std::pair{"state.adam.m." + name, &t.opt_.moments_m()[i]},
                            std::pair{"state.adam.v." + name, &t.opt_.moments_v()[i]}}) {
      auto it = ckpt.find(key);
      if (it == ckpt.end()) throw std::runtime_error("checkpoint: missing entry " + key + " in " + path);
      if (it->second.shape != shape)
        throw std::runtime_error("checkpoint: extents mismatch for " + key);
      *dst = it->second.data;
    }
  }
  return t;
}

void Trainer::train(const std::string& log_csv, const std::string& ckpt_out) {
  std::ofstream log;
  if (!log_csv.empty()) {
    log.open(log_csv, iter_ > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log file " + log_csv);
    if (log.tellp() == 0) log << "iter,loss_rec,loss_geo,loss_app,loss_total,psnr_eval,wallclock_s\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (iter_ < cfg_.iterations) {
    const StepStats s = train_step();
    std::string psnr_field;
    if (cfg_.eval_every > 0 && (iter_ % cfg_.eval_every == 0 || iter_ == cfg_.iterations))
      psnr_field = std::to_string(eval_psnr(0, cfg_.eval_views));
    if (log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << iter_ << ',' << s.rec << ',' << s.geo << ',' << s.app << ',' << s.total << ','
          << psnr_field << ',' << wall << '\n';
    }
    if (!ckpt_out.empty() && cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0)
      save_checkpoint(ckpt_out);
  }
  if (!ckpt_out.empty()) save_checkpoint(ckpt_out);
}

void fine_tune(const std::string& checkpoint_in, const SceneDataset& scene, int64_t iterations,
               TrainConfig cfg, const std::string& checkpoint_out, const std::string& log_csv) {
  Trainer t = Trainer::from_checkpoint(checkpoint_in, {scene}, cfg);
  // Continue for `iterations` more steps on this scene alone.
  t.set_target_iterations(t.iteration() + iterations);
  t.train(log_csv, checkpoint_out);
}

}  // namespace colf
