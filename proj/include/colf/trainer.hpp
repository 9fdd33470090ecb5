#pragma once

#include <memory>
#include <string>
#include <vector>

#include "colf/ccvi.hpp"
#include "colf/encoder.hpp"
#include "colf/field.hpp"
#include "colf/losses.hpp"
#include "colf/render.hpp"
#include "colf/scene.hpp"
#include "colf/tensor.hpp"

namespace colf {

enum class Ablation { Baseline, Vi, ViGeo, ViApp, Full };

Ablation ablation_from_string(const std::string& s);
std::string ablation_to_string(Ablation a);

struct TrainConfig {
  // Ray batch strategy: random rays whose tail doubles as reference rays,
  // plus one adjacent ray per reference forming the supervision pairs.
  int rays_per_iter = 128;
  int random_rays = 112;
  int reference_rays = 16;
  int neighbor_rays = 16;
  int max_offset = 7;

  int batch_scenes = 3;
  int n_source_views = 3;

  double learning_rate = 1e-4;
  int64_t iterations = 5000;
  uint64_t seed = 1;
  double grad_clip = 10.0;

  LossWeights weights;
  double tau = 0.1;
  double eps_c = 1e-3;

  int n_coarse = 32;
  int n_fine = 32;

  // Model dimensions.
  int d = 32;
  int d_k = 32;
  int d_ff = 64;
  int patch = 5;
  int band = 3;
  int w_mlp = 64;
  int L = 6;
  double omega = 1.5;

  int eval_every = 250;  // 0 disables periodic eval
  int eval_views = 4;
  int64_t checkpoint_every = 0;  // 0 = final only

  Ablation ablation = Ablation::Full;

  void validate() const;
  bool use_ccvi() const { return ablation != Ablation::Baseline; }
  LossWeights effective_weights() const;
};

// Everything learnable, addressable by name for checkpoints.
struct Model {
  TrainConfig cfg;
  ParamStore store;
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<Ccvi> ccvi;
  std::unique_ptr<RadianceNet> coarse_field;
  std::unique_ptr<RadianceNet> fine_field;

  explicit Model(const TrainConfig& cfg);
};

struct RayBatch {
  std::vector<Ray> rays;                // random rays then adjacent rays
  std::vector<PixelCoord> pixels;
  std::vector<double> ground_truth;     // (R*3)
  std::vector<RayPair> pairs;           // reference index -> adjacent index
  size_t target_view = 0;
};

struct StepStats {
  double rec = 0, geo = 0, app = 0, total = 0;
  double grad_norm = 0;
};

class Trainer {
 public:
  Trainer(std::vector<SceneDataset> scenes, const TrainConfig& cfg);
  static Trainer from_checkpoint(const std::string& path, std::vector<SceneDataset> scenes,
                                 TrainConfig cfg);

  StepStats train_step();
  // Runs until cfg.iterations, logging one CSV row per step and writing the
  // checkpoint at the configured cadence plus once at the end.
  void train(const std::string& log_csv = "", const std::string& ckpt_out = "");

  // Held-out metrics: mean PSNR over up to max_views target views.
  double eval_psnr(size_t scene_idx, int max_views);
  std::pair<Image, DepthMap> render_view(size_t scene_idx, size_t view_idx, int ray_chunk = 1024);

  void save_checkpoint(const std::string& path) const;

  int64_t iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  void set_target_iterations(int64_t n) { cfg_.iterations = n; }
  Model& model() { return *model_; }
  const std::vector<SceneDataset>& scenes() const { return scenes_; }

  // Uniform per-iteration scene choice; pure so tests and resumed runs see
  // the identical sequence.
  static size_t scene_index_for_iter(uint64_t seed, int64_t iter, size_t n_scenes);

  RayBatch sample_ray_batch(const SceneDataset& scene, Rng& rng) const;

 private:
  struct SceneTermNodes {
    TensorPtr rec, geo, app;
  };
  SceneTermNodes step_scene(const SceneDataset& scene, Rng& rng);
  std::vector<TensorPtr> fused_volumes(const SceneDataset& scene) const;

  TrainConfig cfg_;
  std::vector<SceneDataset> scenes_;
  std::unique_ptr<Model> model_;
  Adam opt_;
  int64_t iter_ = 0;
};

// Continues optimization of a trained checkpoint on a single new scene for
// `iterations` more steps; the input checkpoint file is left untouched.
void fine_tune(const std::string& checkpoint_in, const SceneDataset& scene, int64_t iterations,
               TrainConfig cfg, const std::string& checkpoint_out, const std::string& log_csv = "");

}  // namespace colf
