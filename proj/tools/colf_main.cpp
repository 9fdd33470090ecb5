// colf: train and evaluate collaborative multi-view radiance fields on
// synthetic desk-scale scenes.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "colf/checkpoint.hpp"
#include "colf/metrics.hpp"
#include "colf/scene.hpp"
#include "colf/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace colf;

namespace {

int default_threads() {
  if (const char* env = std::getenv("COLF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  json cfg;
  is >> cfg;
  return cfg;
}

struct TrainFlags {
  std::vector<std::string> scenes;
  std::string out, log, resume, config;
  TrainConfig cfg;
  std::string ablation = "full";
};

// One entry per flag that also has a config-file key. Flags override config
// values; config values override defaults.
struct ConfigMerge {
  CLI::Option* opt;
  const char* key;
  std::function<void(const json&)> set;
};

void apply_config(const json& cfg, const std::vector<ConfigMerge>& merges) {
  for (const auto& m : merges)
    if (m.opt->count() == 0 && cfg.contains(m.key)) m.set(cfg.at(m.key));
}

void add_model_options(CLI::App* cmd, TrainFlags& tf, std::vector<ConfigMerge>& merges) {
  auto& c = tf.cfg;
  auto track = [&merges](CLI::Option* o, const char* key, auto& field) {
    merges.push_back({o, key, [&field](const json& v) { field = v.get<std::decay_t<decltype(field)>>(); }});
  };
  track(cmd->add_option("--views", c.n_source_views, "Source views per scene"), "views", c.n_source_views);
  track(cmd->add_option("--iters", c.iterations, "Training iterations"), "iters", c.iterations);
  track(cmd->add_option("--seed", c.seed, "RNG seed"), "seed", c.seed);
  track(cmd->add_option("--lr", c.learning_rate, "Learning rate"), "lr", c.learning_rate);
  track(cmd->add_option("--rays", c.rays_per_iter, "Rays per iteration"), "rays", c.rays_per_iter);
  track(cmd->add_option("--random-rays", c.random_rays, "Randomly placed rays"), "random_rays",
        c.random_rays);
  track(cmd->add_option("--reference-rays", c.reference_rays, "Reference rays (tail of random)"),
        "reference_rays", c.reference_rays);
  track(cmd->add_option("--neighbor-rays", c.neighbor_rays, "Adjacent rays"), "neighbor_rays",
        c.neighbor_rays);
  track(cmd->add_option("--max-offset", c.max_offset, "Adjacent-ray pixel offset bound"), "max_offset",
        c.max_offset);
  track(cmd->add_option("--batch-scenes", c.batch_scenes, "Scenes per iteration"), "batch_scenes",
        c.batch_scenes);
  track(cmd->add_option("--ncoarse", c.n_coarse, "Coarse samples per ray"), "n_coarse", c.n_coarse);
  track(cmd->add_option("--nfine", c.n_fine, "Importance samples per ray"), "n_fine", c.n_fine);
  track(cmd->add_option("--d", c.d, "Feature volume channels"), "d", c.d);
  track(cmd->add_option("--dk", c.d_k, "Attention Q/K channels"), "d_k", c.d_k);
  track(cmd->add_option("--dff", c.d_ff, "Attention FFN width"), "d_ff", c.d_ff);
  track(cmd->add_option("--patch", c.patch, "Attention patch size s"), "patch", c.patch);
  track(cmd->add_option("--band", c.band, "Attention band width a"), "band", c.band);
  track(cmd->add_option("--wmlp", c.w_mlp, "Radiance network width"), "w_mlp", c.w_mlp);
  track(cmd->add_option("--enc-levels", c.L, "Positional encoding octaves"), "L", c.L);
  track(cmd->add_option("--omega", c.omega, "Positional encoding base frequency"), "omega", c.omega);
  track(cmd->add_option("--lambda-geo", c.weights.lambda_geo, "Geometry loss weight"), "lambda_geo",
        c.weights.lambda_geo);
  track(cmd->add_option("--lambda-app", c.weights.lambda_app, "Appearance loss weight"), "lambda_app",
        c.weights.lambda_app);
  track(cmd->add_option("--tau", c.tau, "Cumulative density mask threshold"), "tau", c.tau);
  track(cmd->add_option("--eps-c", c.eps_c, "Color distribution floor"), "eps_c", c.eps_c);
  track(cmd->add_option("--grad-clip", c.grad_clip, "Global gradient norm clip (<=0 off)"), "grad_clip",
        c.grad_clip);
  track(cmd->add_option("--eval-every", c.eval_every, "Eval cadence in iterations (0 off)"), "eval_every",
        c.eval_every);
  track(cmd->add_option("--eval-views", c.eval_views, "Held-out views per eval"), "eval_views",
        c.eval_views);
  track(cmd->add_option("--ckpt-every", c.checkpoint_every, "Checkpoint cadence (0 = final only)"),
        "ckpt_every", c.checkpoint_every);
}

std::vector<SceneDataset> load_scenes(const std::vector<std::string>& dirs) {
  std::vector<SceneDataset> scenes;
  for (const auto& d : dirs) scenes.push_back(load_dataset(d));
  return scenes;
}

void write_normalized_depth_png(const std::string& path, const DepthMap& d) {
  double lo = 1e300, hi = -1e300;
  for (double v : d.depth) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  Image img = Image::filled(d.width, d.height, 0, 0, 0);
  for (size_t i = 0; i < d.depth.size(); ++i) {
    const double g = (d.depth[i] - lo) / span;
    img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = g;
  }
  write_png(path, img);
}

int run_make_scene(const std::string& preset, int views, int sources, int size, uint64_t seed,
                   const std::string& layout, double near, double far, double radius, double fov,
                   int oracle_samples, int threads, const std::string& out) {
  SceneSpec spec;
  if (preset == "tri-sphere") {
    spec.field = tri_sphere_field(seed);
  } else {
    throw CLI::ValidationError("--preset", "unknown preset '" + preset + "' (available: tri-sphere)");
  }
  spec.n_views = views;
  spec.n_source = sources;
  spec.image_size = size;
  spec.seed = seed;
  if (layout == "ring")
    spec.layout = Layout::Ring;
  else if (layout == "hemisphere")
    spec.layout = Layout::Hemisphere;
  else
    throw CLI::ValidationError("--layout", "expected ring or hemisphere");
  spec.near = near;
  spec.far = far;
  spec.radius = radius;
  spec.fov_deg = fov;
  spec.oracle_samples = oracle_samples;
  spec.threads = threads;
  auto ds = make_scene(spec);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.cameras.size() << " views to " << out << "\n";
  return 0;
}

int run_train(const TrainFlags& tf) {
  auto scenes = load_scenes(tf.scenes);
  TrainConfig cfg = tf.cfg;
  cfg.ablation = ablation_from_string(tf.ablation);
  const std::string log = tf.log.empty() ? tf.out + ".csv" : tf.log;
  if (!tf.resume.empty()) {
    Trainer t = Trainer::from_checkpoint(tf.resume, std::move(scenes), cfg);
    t.train(log, tf.out);
    std::cout << "resumed to iteration " << t.iteration() << ", checkpoint " << tf.out << "\n";
    return 0;
  }
  Trainer t(std::move(scenes), cfg);
  t.train(log, tf.out);
  std::cout << "trained " << t.iteration() << " iterations, checkpoint " << tf.out << "\n";
  return 0;
}

int run_fine_tune(const TrainFlags& tf, const std::string& base_ckpt, int64_t iterations) {
  auto scenes = load_scenes(tf.scenes);
  if (scenes.size() != 1) throw std::runtime_error("fine-tune expects exactly one scene");
  TrainConfig cfg = tf.cfg;
  cfg.ablation = ablation_from_string(tf.ablation);
  const std::string log = tf.log.empty() ? tf.out + ".csv" : tf.log;
  fine_tune(base_ckpt, scenes[0], iterations, cfg, tf.out, log);
  std::cout << "fine-tuned " << iterations << " iterations, checkpoint " << tf.out << "\n";
  return 0;
}

int run_render(const std::string& ckpt, const std::string& scene_dir, const std::string& out,
               const std::string& which, bool depth) {
  auto ds = load_dataset(scene_dir);
  TrainConfig cfg;
  cfg.eval_every = 0;
  Trainer t = Trainer::from_checkpoint(ckpt, {ds}, cfg);
  fs::create_directories(out);
  char name[64];
  size_t count = 0;
  for (size_t v = 0; v < ds.cameras.size(); ++v) {
    const bool is_target = static_cast<int>(v) >= t.config().n_source_views;
    if (which == "targets" && !is_target) continue;
    auto [img, dmap] = t.render_view(0, v);
    std::snprintf(name, sizeof(name), "view_%03zu.png", v);
    write_png((fs::path(out) / name).string(), img);
    if (depth) {
      std::snprintf(name, sizeof(name), "view_%03zu_depth.png", v);
      write_normalized_depth_png((fs::path(out) / name).string(), dmap);
      std::snprintf(name, sizeof(name), "view_%03zu_depth.f64", v);
      write_depth((fs::path(out) / name).string(), dmap);
    }
    ++count;
  }
  std::cout << "rendered " << count << " views to " << out << "\n";
  return 0;
}

int run_eval(const std::string& scene_dir, const std::string& renders, const std::string& out_csv,
             bool include_sources) {
  auto ds = load_dataset(scene_dir);
  std::ostringstream csv;
  csv << "view,psnr,ssim,average2\n";
  std::cout << "view      PSNR     SSIM  Average(2-term)\n";
  double sum_p = 0, sum_s = 0, sum_a = 0;
  int n = 0;
  char name[64];
  for (size_t v = 0; v < ds.cameras.size(); ++v) {
    if (!include_sources && v < ds.splits.size() && ds.splits[v] == "source") continue;
    std::snprintf(name, sizeof(name), "view_%03zu.png", v);
    const fs::path p = fs::path(renders) / name;
    if (!fs::exists(p)) continue;
    Image rendered = read_png(p.string());
    const double pv = psnr(rendered, ds.images[v]);
    const double sv = ssim(rendered, ds.images[v]);
    const double av = average_metric(pv, sv);
    std::printf("%-6zu %8.3f %8.4f %12.5f\n", v, pv, sv, av);
    csv << v << ',' << pv << ',' << sv << ',' << av << '\n';
    sum_p += pv;
    sum_s += sv;
    sum_a += av;
    ++n;
  }
  if (n == 0) throw std::runtime_error("no rendered/ground-truth pairs found in " + renders);
  std::printf("mean   %8.3f %8.4f %12.5f  (%d views)\n", sum_p / n, sum_s / n, sum_a / n, n);
  csv << "mean," << sum_p / n << ',' << sum_s / n << ',' << sum_a / n << '\n';
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    os << csv.str();
  }
  return 0;
}

int run_ablate(TrainFlags tf, const std::string& prefix) {
  std::ofstream combined(prefix + "_summary.csv");
  combined << "ablation,psnr,ssim,average2\n";
  for (const char* row : {"baseline", "vi", "vi-geo", "vi-app", "full"}) {
    TrainFlags run = tf;
    run.ablation = row;
    run.out = prefix + "_" + row + ".colf";
    run.log = prefix + "_" + row + ".csv";
    run_train(run);
    // Evaluate held-out views of the first scene.
    auto scenes = load_scenes(run.scenes);
    TrainConfig cfg = run.cfg;
    cfg.ablation = ablation_from_string(row);
    Trainer t = Trainer::from_checkpoint(run.out, {scenes[0]}, cfg);
    double sum_p = 0, sum_s = 0;
    int n = 0;
    for (size_t v = cfg.n_source_views; v < scenes[0].cameras.size(); ++v, ++n) {
      auto [img, dmap] = t.render_view(0, v);
      sum_p += psnr(img, scenes[0].images[v]);
      sum_s += ssim(img, scenes[0].images[v]);
    }
    const double mp = sum_p / std::max(1, n), ms = sum_s / std::max(1, n);
    combined << row << ',' << mp << ',' << ms << ',' << average_metric(mp, ms) << '\n';
    combined.flush();
    std::cout << "[" << row << "] held-out PSNR " << mp << " SSIM " << ms << "\n";
  }
  std::cout << "summary: " << prefix + "_summary.csv" << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator_for_tensors();
  CLI::App app{"Collaborative multi-view radiance fields on synthetic scenes"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "Worker thread cap (env COLF_THREADS)");

  // make-scene
  auto* mk = app.add_subcommand("make-scene", "Generate a synthetic posed-image dataset");
  std::string mk_preset = "tri-sphere", mk_layout = "ring", mk_out;
  int mk_views = 6, mk_sources = 3, mk_size = 64, mk_samples = 512;
  uint64_t mk_seed = 1;
  double mk_near = 2.5, mk_far = 5.5, mk_radius = 4.0, mk_fov = 40.0;
  mk->add_option("--preset", mk_preset, "Scene preset (tri-sphere)");
  mk->add_option("--views", mk_views, "Total views")->check(CLI::Range(2, 1024));
  mk->add_option("--sources", mk_sources, "Views labeled as sources");
  mk->add_option("--size", mk_size, "Image width/height in pixels");
  mk->add_option("--seed", mk_seed, "Scene seed (jitters the preset)");
  mk->add_option("--layout", mk_layout, "Camera layout: ring | hemisphere");
  mk->add_option("--near", mk_near, "Near bound");
  mk->add_option("--far", mk_far, "Far bound");
  mk->add_option("--radius", mk_radius, "Camera ring radius");
  mk->add_option("--fov", mk_fov, "Field of view in degrees");
  mk->add_option("--oracle-samples", mk_samples, "Quadrature samples per ray");
  mk->add_option("--out", mk_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model on one or more scenes");
  TrainFlags tf;
  std::vector<ConfigMerge> tr_merges;
  tr->add_option("--scenes", tf.scenes, "Scene directories")->required()->delimiter(',');
  tr->add_option("--out", tf.out, "Output checkpoint path")->required();
  tr->add_option("--log", tf.log, "Metrics CSV path (default: <out>.csv)");
  tr->add_option("--resume", tf.resume, "Resume from a checkpoint");
  tr->add_option("--ablation", tf.ablation, "baseline | vi | vi-geo | vi-app | full");
  tr->add_option("--config", tf.config, "JSON config file (flags override)");
  add_model_options(tr, tf, tr_merges);

  // fine-tune
  auto* ft = app.add_subcommand("fine-tune", "Continue a checkpoint on a single new scene");
  TrainFlags ff;
  std::string ft_base;
  int64_t ft_iters = 1000;
  std::vector<ConfigMerge> ft_merges;
  ft->add_option("--checkpoint", ft_base, "Base checkpoint")->required();
  ft->add_option("--scenes", ff.scenes, "Scene directory")->required()->delimiter(',');
  ft->add_option("--out", ff.out, "Output checkpoint path")->required();
  ft->add_option("--log", ff.log, "Metrics CSV path");
  ft->add_option("--iters-extra", ft_iters, "Additional iterations");
  ft->add_option("--ablation", ff.ablation, "baseline | vi | vi-geo | vi-app | full");
  ft->add_option("--config", ff.config, "JSON config file (flags override)");
  add_model_options(ft, ff, ft_merges);

  // render
  auto* rd = app.add_subcommand("render", "Render dataset poses from a checkpoint");
  std::string rd_ckpt, rd_scene, rd_out, rd_which = "targets";
  bool rd_depth = false;
  rd->add_option("--checkpoint", rd_ckpt, "Checkpoint path")->required();
  rd->add_option("--scene", rd_scene, "Scene directory")->required();
  rd->add_option("--out", rd_out, "Output directory")->required();
  rd->add_option("--views", rd_which, "targets | all");
  rd->add_flag("--depth", rd_depth, "Also write normalized depth PNGs + f64 sidecars");

  // eval
  auto* ev = app.add_subcommand("eval", "Score rendered views against scene ground truth");
  std::string ev_scene, ev_renders, ev_csv;
  bool ev_all = false;
  ev->add_option("--scene", ev_scene, "Scene directory")->required();
  ev->add_option("--renders", ev_renders, "Directory of rendered view_XXX.png")->required();
  ev->add_option("--out", ev_csv, "Write the per-view table as CSV");
  ev->add_flag("--all", ev_all, "Include source-labeled views");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run baseline/vi/vi-geo/vi-app/full and summarize");
  TrainFlags af;
  std::string ab_prefix;
  std::vector<ConfigMerge> ab_merges;
  ab->add_option("--scenes", af.scenes, "Scene directories")->required()->delimiter(',');
  ab->add_option("--out-prefix", ab_prefix, "Prefix for checkpoints/logs/summary")->required();
  ab->add_option("--config", af.config, "JSON config file (flags override)");
  add_model_options(ab, af, ab_merges);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mk->parsed())
      return run_make_scene(mk_preset, mk_views, mk_sources, mk_size, mk_seed, mk_layout, mk_near, mk_far,
                            mk_radius, mk_fov, mk_samples, threads, mk_out);
    if (tr->parsed()) {
      apply_config(load_config(tf.config), tr_merges);
      return run_train(tf);
    }
    if (ft->parsed()) {
      apply_config(load_config(ff.config), ft_merges);
      return run_fine_tune(ff, ft_base, ft_iters);
    }
    if (rd->parsed()) return run_render(rd_ckpt, rd_scene, rd_out, rd_which, rd_depth);
    if (ev->parsed()) return run_eval(ev_scene, ev_renders, ev_csv, ev_all);
    if (ab->parsed()) {
      apply_config(load_config(af.config), ab_merges);
      return run_ablate(af, ab_prefix);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
