#pragma once

#include "sketchdit/checkpoint.hpp"
#include "sketchdit/data.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sketchdit {

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
  };

  AdamW(std::vector<Parameter*> params, Options options);

  /// Applies one update. Parameters without an entry in `grads` only decay.
  void step(const GradMap& grads, double lr);
  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const Options& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  Options options_;
  long t_ = 0;
};

enum class TrainStage { Backbone, GenStage1, GenStage2, Edit };

[[nodiscard]] std::string to_string(TrainStage s);

struct TrainConfig {
  std::string task = "generation";  // backbone | generation | editing
  std::filesystem::path dataset;
  std::filesystem::path output;      // checkpoint written at the end
  std::filesystem::path init;        // backbone checkpoint (generation) or generation checkpoint (editing)
  std::filesystem::path metrics_log; // CSV: step,loss,lr,stage; empty disables
  std::uint64_t seed = 0;

  int backbone_steps = 30000;
  int stage1_steps = 2000;
  int stage2_steps = 1000;
  int edit_steps = 2000;
  int batch_size = 4;
  double lr = 1e-3;
  double backbone_lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double grad_clip = 1.0;
  int warmup_steps = 200;
  std::string lr_schedule = "cosine";  // cosine | constant, over all steps of the task
  double cond_dropout = 0.1;  // prompt and sketches dropped together
  int images_per_video_batch = 1;  // stage-1 mixing ratio, alternating whole batches
  bool use_image_stage = true;     // false: stage 1 trains on video only ("w/o image")
  bool edit_from_scratch = false;  // editing without generation pretraining
  double holdout_fraction = 0.1;
  ControlConfig control;
  BackboneConfig backbone = BackboneConfig::toy();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
[[nodiscard]] TrainConfig load_train_config(const std::filesystem::path& path);

/// One training example after keyframe, dropout and mask sampling.
struct TrainExample {
  Mat x0;  // model-space latent tokens of the target clip
  Conditioning cond;
};

[[nodiscard]] TrainExample make_backbone_example(const StoredSample& s, std::mt19937_64& rng, double dropout);
[[nodiscard]] TrainExample make_generation_example(const StoredSample& s, std::mt19937_64& rng, double dropout);
[[nodiscard]] TrainExample make_edit_example(const StoredSample& s, std::mt19937_64& rng, double dropout);

/// v-prediction MSE for one example at a fixed timestep and noise draw.
Var example_loss(Tape& t, const SketchVideoModel& model, const TrainExample& ex, int timestep, const Mat& eps);

/// Mean loss over a batch, accumulating mean gradients when `grads` is given.
double batch_loss(const SketchVideoModel& model, const std::vector<TrainExample>& batch, std::mt19937_64& rng,
                  GradMap* grads);

/// Learning rate at 0-based `step` of `total`: linear warmup, then constant or cosine decay to zero.
[[nodiscard]] double learning_rate_at(int step, int total, double base, int warmup, const std::string& schedule);

/// Clips the global gradient norm in place; returns the norm before clipping.
double clip_gradients(GradMap& grads, double max_norm);

struct TrainProgress {
  TrainStage stage;
  int step;  // global step, 1-based
  double loss;
  double lr;
};

using ProgressFn = std::function<void(const TrainProgress&)>;

struct TrainResult {
  SketchVideoModel model;
  std::vector<double> losses;
  std::string backbone_hash_before;
  std::string backbone_hash_after;
};

[[nodiscard]] TrainResult pretrain_backbone(const TrainConfig& config, const ProgressFn& progress = {});
[[nodiscard]] TrainResult train_generation(const TrainConfig& config, const ProgressFn& progress = {});
/// Refuses to start without a generation checkpoint unless `edit_from_scratch` is set.
[[nodiscard]] TrainResult train_editing(const TrainConfig& config, const ProgressFn& progress = {});

/// Dispatches on `config.task` and writes the checkpoint to `config.output`.
TrainResult run_training(const TrainConfig& config, const ProgressFn& progress = {});

}  // namespace sketchdit
