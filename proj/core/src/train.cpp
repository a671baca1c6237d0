#include "sketchdit/train.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <fstream>

namespace fs = std::filesystem;

namespace sketchdit {

AdamW::AdamW(std::vector<Parameter*> params, Options options) : params_(std::move(params)), options_(options) {
  for (const Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(const GradMap& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    p->value *= 1.0 - lr * options_.weight_decay;
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    const Mat& g = it->second;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    p->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

std::string to_string(TrainStage s) {
  switch (s) {
    case TrainStage::Backbone: return "backbone";
    case TrainStage::GenStage1: return "gen-stage1";
    case TrainStage::GenStage2: return "gen-stage2";
    case TrainStage::Edit: return "edit";
  }
  return "backbone";
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"task", c.task},
                     {"dataset", c.dataset.string()},
                     {"output", c.output.string()},
                     {"init", c.init.string()},
                     {"metrics_log", c.metrics_log.string()},
                     {"seed", c.seed},
                     {"backbone_steps", c.backbone_steps},
                     {"stage1_steps", c.stage1_steps},
                     {"stage2_steps", c.stage2_steps},
                     {"edit_steps", c.edit_steps},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"backbone_lr", c.backbone_lr},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"grad_clip", c.grad_clip},
                     {"warmup_steps", c.warmup_steps},
                     {"lr_schedule", c.lr_schedule},
                     {"cond_dropout", c.cond_dropout},
                     {"images_per_video_batch", c.images_per_video_batch},
                     {"use_image_stage", c.use_image_stage},
                     {"edit_from_scratch", c.edit_from_scratch},
                     {"holdout_fraction", c.holdout_fraction},
                     {"control", c.control},
                     {"backbone", c.backbone}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known = {
      "task",         "dataset",        "output",     "init",       "metrics_log",  "seed",
      "backbone_steps", "stage1_steps", "stage2_steps", "edit_steps", "batch_size", "lr",
      "backbone_lr",  "weight_decay",   "beta1",      "beta2",      "grad_clip",    "warmup_steps", "lr_schedule", "cond_dropout",
      "images_per_video_batch", "use_image_stage", "edit_from_scratch", "holdout_fraction", "control", "backbone"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown training config field '" + key + "'");
    }
  }
  TrainConfig d;
  c.task = j.value("task", d.task);
  c.dataset = j.value("dataset", std::string());
  c.output = j.value("output", std::string());
  c.init = j.value("init", std::string());
  c.metrics_log = j.value("metrics_log", std::string());
  c.seed = j.value("seed", d.seed);
  c.backbone_steps = j.value("backbone_steps", d.backbone_steps);
  c.stage1_steps = j.value("stage1_steps", d.stage1_steps);
  c.stage2_steps = j.value("stage2_steps", d.stage2_steps);
  c.edit_steps = j.value("edit_steps", d.edit_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.backbone_lr = j.value("backbone_lr", d.backbone_lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.cond_dropout = j.value("cond_dropout", d.cond_dropout);
  c.images_per_video_batch = j.value("images_per_video_batch", d.images_per_video_batch);
  c.use_image_stage = j.value("use_image_stage", d.use_image_stage);
  c.edit_from_scratch = j.value("edit_from_scratch", d.edit_from_scratch);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.control = j.contains("control") ? j.at("control").get<ControlConfig>() : d.control;
  c.backbone = j.contains("backbone") ? j.at("backbone").get<BackboneConfig>() : d.backbone;
  if (c.task != "backbone" && c.task != "generation" && c.task != "editing") {
    throw std::invalid_argument("task must be backbone, generation or editing");
  }
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (c.lr_schedule != "cosine" && c.lr_schedule != "constant") {
    throw std::invalid_argument("lr_schedule must be cosine or constant");
  }
  if (c.warmup_steps < 0) throw std::invalid_argument("warmup_steps must be non-negative");
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("missing training config " + path.string());
  try {
    return nlohmann::json::parse(f).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed training config: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

namespace {

bool drop(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

LatentLayout layout_of(const StoredSample& s) {
  const int gh = s.clip.height / codec::kSpatial;
  const int gw = s.clip.width / codec::kSpatial;
  if (s.entry.kind == SampleKind::Image) {
    LatentLayout l;
    l.grid_h = gh;
    l.grid_w = gw;
    l.time_positions = {codec::latent_frame_of(s.entry.declared_time)};
    return l;
  }
  return LatentLayout::video(codec::latent_frames(s.clip.frames), gh, gw);
}

SketchCondition sample_sketches(const StoredSample& s, std::mt19937_64& rng) {
  KeyframeSketchSet set;
  if (s.entry.kind == SampleKind::Image) {
    set.sketches = {s.sketches.at(0)};
    set.time_points = {0};
    return resolve_sketches(set, 1, s.clip.height, s.clip.width, s.entry.declared_time);
  }
  const int k = std::uniform_int_distribution<int>(1, 2)(rng);
  set.time_points = sample_keyframes(s.clip.frames, k, rng);
  for (int tp : set.time_points) set.sketches.push_back(s.sketches.at(tp));
  return resolve_sketches(set, s.clip.frames, s.clip.height, s.clip.width);
}

}  // namespace

TrainExample make_backbone_example(const StoredSample& s, std::mt19937_64& rng, double dropout) {
  TrainExample ex;
  ex.x0 = to_model_space(codec::encode_video(s.clip).values);
  ex.cond.layout = layout_of(s);
  if (!drop(rng, dropout)) ex.cond.prompt = Tokenizer::encode(s.entry.prompt);
  return ex;
}

TrainExample make_generation_example(const StoredSample& s, std::mt19937_64& rng, double dropout) {
  TrainExample ex;
  ex.x0 = to_model_space(codec::encode_video(s.clip).values);
  ex.cond.layout = layout_of(s);
  SketchCondition sketches = sample_sketches(s, rng);
  if (!drop(rng, dropout)) {
    ex.cond.prompt = Tokenizer::encode(s.entry.prompt);
    ex.cond.sketches = std::move(sketches);
  }
  return ex;
}

TrainExample make_edit_example(const StoredSample& s, std::mt19937_64& rng, double dropout) {
  if (s.entry.kind != SampleKind::Video) throw DataError("editing trains on video samples");
  TrainExample ex = make_generation_example(s, rng, dropout);
  const MaskSpec spec = sample_edit_mask(rng, s.scene);
  const MaskTrack track = mask_rectangle_track(spec, s.clip.frames, s.clip.height, s.clip.width, scene_velocity(s.scene));
  const MaskedVideoLatent masked = mask_video(s.clip, track);
  ex.cond.edit = EditInputs{to_model_space(masked.latent.values), masked.mask.as_weights()};
  return ex;
}

Var example_loss(Tape& t, const SketchVideoModel& model, const TrainExample& ex, int timestep, const Mat& eps) {
  const Mat z = noise_latent(model.schedule, ex.x0, eps, timestep);
  Var v = forward_velocity(t, model, z, timestep, ex.cond);
  return ops::mse(t, v, v_target(model.schedule, ex.x0, eps, timestep));
}

double batch_loss(const SketchVideoModel& model, const std::vector<TrainExample>& batch, std::mt19937_64& rng,
                  GradMap* grads) {
  if (batch.empty()) throw DataError("empty batch");
  std::uniform_int_distribution<int> pick_t(1, model.schedule.train_steps);
  double total = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    const int timestep = pick_t(rng);
    const Mat eps = gaussian(static_cast<int>(ex.x0.rows()), static_cast<int>(ex.x0.cols()), rng);
    Tape t(grads != nullptr);
    Var loss = example_loss(t, model, ex, timestep, eps);
    const double value = t.value(loss)(0, 0);
    if (!std::isfinite(value)) throw NonFiniteError("non-finite loss at timestep " + std::to_string(timestep));
    total += value;
    if (grads != nullptr) {
      t.backward(loss);
      GradMap g;
      t.accumulate_param_grads(g);
      for (auto& [p, m] : g) {
        auto it = grads->find(p);
        if (it == grads->end()) {
          grads->emplace(p, w * m);
        } else {
          it->second += w * m;
        }
      }
    }
  }
  return total * w;
}

double learning_rate_at(int step, int total, double base, int warmup, const std::string& schedule) {
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (schedule == "constant" || total <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double clip_gradients(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [p, g] : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    for (auto& [p, g] : grads) g *= max_norm / norm;
  }
  return norm;
}

// ---------------------------------------------------------------------------

namespace {

class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw DataError("cannot write metrics log " + path.string());
    out_ << "step,loss,lr,stage\n";
  }
  void row(const TrainProgress& p) {
    if (out_.is_open()) out_ << p.step << ',' << p.loss << ',' << p.lr << ',' << to_string(p.stage) << '\n';
  }

 private:
  std::ofstream out_;
};

using ExampleFn = TrainExample (*)(const StoredSample&, std::mt19937_64&, double);

struct StagePlan {
  TrainStage stage;
  int steps;
  bool mix_images;
  ExampleFn make;
};

void run_stages(SketchVideoModel& model, const TrainConfig& cfg, double lr, const std::vector<StagePlan>& plan,
                TrainResult& result, const ProgressFn& progress) {
  AdamW opt(model.trainable_parameters(), {lr, cfg.weight_decay, cfg.beta1, cfg.beta2});
  std::mt19937_64 rng(cfg.seed * 7919 + 17);
  DatasetLoader videos(cfg.dataset, SampleKind::Video, cfg.seed, cfg.holdout_fraction);
  std::optional<DatasetLoader> images;
  MetricsLog log(cfg.metrics_log);
  int global = 0;
  int total = 0;
  for (const StagePlan& stage : plan) total += stage.steps;
  for (const StagePlan& stage : plan) {
    if (stage.mix_images && !images) images.emplace(cfg.dataset, SampleKind::Image, cfg.seed + 1, cfg.holdout_fraction);
    for (int s = 0; s < stage.steps; ++s) {
      // Whole batches of one kind: images, then videos, at the configured ratio.
      const bool image_batch = stage.mix_images && (s % (cfg.images_per_video_batch + 1)) < cfg.images_per_video_batch;
      std::vector<TrainExample> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const StoredSample sample = image_batch ? images->next() : videos.next();
        batch.push_back(stage.make(sample, rng, cfg.cond_dropout));
      }
      GradMap grads;
      const double loss = batch_loss(model, batch, rng, &grads);
      clip_gradients(grads, cfg.grad_clip);
      const double step_lr = learning_rate_at(global, total, lr, cfg.warmup_steps, cfg.lr_schedule);
      opt.step(grads, step_lr);
      ++global;
      result.losses.push_back(loss);
      const TrainProgress p{stage.stage, global, loss, step_lr};
      log.row(p);
      if (progress) progress(p);
    }
  }
}

void finish(TrainResult& r) { r.backbone_hash_after = backbone_hash(r.model.backbone); }

}  // namespace

TrainResult pretrain_backbone(const TrainConfig& cfg, const ProgressFn& progress) {
  TrainResult r;
  r.model = build_model(ModelSpec{cfg.backbone, std::nullopt, false}, cfg.seed);
  r.backbone_hash_before = backbone_hash(r.model.backbone);
  run_stages(r.model, cfg, cfg.backbone_lr,
             {{TrainStage::Backbone, cfg.backbone_steps, true, &make_backbone_example}}, r, progress);
  finish(r);
  return r;
}

TrainResult train_generation(const TrainConfig& cfg, const ProgressFn& progress) {
  if (cfg.init.empty()) throw CheckpointError("generation training needs a backbone checkpoint (init)");
  const CheckpointData base = read_checkpoint(cfg.init);
  if (base.spec.control) throw CheckpointError("init checkpoint already carries a control branch");
  TrainResult r;
  r.model = assemble_model(backbone_from_checkpoint(base), ModelSpec{base.spec.backbone, cfg.control, false}, cfg.seed);
  r.model.schedule = base.schedule;
  r.backbone_hash_before = backbone_hash(r.model.backbone);
  run_stages(r.model, cfg, cfg.lr,
             {{TrainStage::GenStage1, cfg.stage1_steps, cfg.use_image_stage, &make_generation_example},
              {TrainStage::GenStage2, cfg.stage2_steps, false, &make_generation_example}},
             r, progress);
  finish(r);
  return r;
}

TrainResult train_editing(const TrainConfig& cfg, const ProgressFn& progress) {
  if (cfg.init.empty()) {
    throw CheckpointError(cfg.edit_from_scratch ? "editing from scratch needs a backbone checkpoint (init)"
                                                : "editing needs a generation checkpoint (init)");
  }
  const CheckpointData base = read_checkpoint(cfg.init);
  if (!cfg.edit_from_scratch && !base.spec.control) {
    throw CheckpointError("editing must start from a generation checkpoint; set edit_from_scratch for the ablation");
  }
  if (base.spec.insertion) throw CheckpointError("init checkpoint is already an editing model");
  const ControlConfig control = cfg.edit_from_scratch ? cfg.control : *base.spec.control;
  TrainResult r;
  r.model = assemble_model(backbone_from_checkpoint(base), ModelSpec{base.spec.backbone, control, true}, cfg.seed,
                           cfg.edit_from_scratch);
  r.model.schedule = base.schedule;
  if (!cfg.edit_from_scratch) {
    const PartialLoadReport rep = load_by_name(r.model, base, "control.");
    if (!rep.missing.empty()) throw CheckpointError("generation checkpoint lacks " + rep.missing.front());
  }
  r.backbone_hash_before = backbone_hash(r.model.backbone);
  run_stages(r.model, cfg, cfg.lr, {{TrainStage::Edit, cfg.edit_steps, false, &make_edit_example}}, r, progress);
  finish(r);
  return r;
}

TrainResult run_training(const TrainConfig& cfg, const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult r;
  if (cfg.task == "backbone") {
    r = pretrain_backbone(cfg, progress);
  } else if (cfg.task == "generation") {
    r = train_generation(cfg, progress);
  } else if (cfg.task == "editing") {
    r = train_editing(cfg, progress);
  } else {
    throw std::invalid_argument("unknown training task '" + cfg.task + "'");
  }
  if (r.backbone_hash_before != r.backbone_hash_after && cfg.task != "backbone") {
    throw std::logic_error("frozen backbone changed during training");
  }
  if (!cfg.output.empty()) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json meta{{"task", cfg.task}, {"steps", r.losses.size()}, {"seconds", seconds}, {"train_config", cfg}};
    save_checkpoint(cfg.output, r.model, meta);
  }
  return r;
}

}  // namespace sketchdit
