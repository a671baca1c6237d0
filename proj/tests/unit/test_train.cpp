#include "sketchdit/errors.hpp"
#include "sketchdit/train.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

using namespace sketchdit;
using namespace sketchdit::testing;

TEST(TrainConfigJson, RoundTripsAndRejectsUnknownFields) {
  TrainConfig c;
  c.task = "editing";
  c.stage1_steps = 17;
  c.lr_schedule = "constant";
  c.control.placement = {1, 3, 5};
  c.use_image_stage = false;
  nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.control.placement, (std::vector<int>{1, 3, 5}));

  j["learning_rate"] = 0.1;
  EXPECT_THROW((void)j.get<TrainConfig>(), std::invalid_argument);
  EXPECT_THROW((void)nlohmann::json({{"task", "finetune"}}).get<TrainConfig>(), std::invalid_argument);
  EXPECT_THROW((void)nlohmann::json({{"lr_schedule", "step"}}).get<TrainConfig>(), std::invalid_argument);

  TempDir dir("cfg");
  std::ofstream(dir.path() / "c.json") << nlohmann::json{{"task", "backbone"}, {"backbone_steps", 5}}.dump();
  EXPECT_EQ(load_train_config(dir.path() / "c.json").backbone_steps, 5);
  EXPECT_THROW((void)load_train_config(dir.path() / "missing.json"), DataError);
}

TEST(LearningRate, WarmupThenCosine) {
  EXPECT_DOUBLE_EQ(learning_rate_at(0, 100, 1.0, 10, "cosine"), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(9, 100, 1.0, 10, "cosine"), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(10, 100, 1.0, 10, "cosine"), 1.0);
  EXPECT_NEAR(learning_rate_at(55, 100, 1.0, 10, "cosine"), 0.5, 1e-12);
  EXPECT_LT(learning_rate_at(99, 100, 1.0, 10, "cosine"), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(99, 100, 2.0, 10, "constant"), 2.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(0, 5, 2.0, 0, "cosine"), 2.0);
}

TEST(Optimizer, FirstAdamStepHasLearningRateMagnitude) {
  Parameter p{"p", Mat::Constant(2, 2, 1.0)};
  Parameter idle{"idle", Mat::Constant(1, 1, 2.0)};
  AdamW opt({&p, &idle}, {0.1, 0.0, 0.9, 0.95, 1e-12});
  GradMap g;
  g.emplace(&p, (Mat(2, 2) << 3.0, -0.5, 1e-3, -7.0).finished());
  opt.step(g, 0.1);
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-9);
  EXPECT_NEAR(p.value(0, 1), 1.1, 1e-9);
  EXPECT_NEAR(p.value(1, 0), 0.9, 1e-6);
  EXPECT_NEAR(p.value(1, 1), 1.1, 1e-9);
  EXPECT_EQ(idle.value(0, 0), 2.0);

  AdamW decay({&idle}, {0.1, 0.5, 0.9, 0.95, 1e-8});
  decay.step({}, 0.1);
  EXPECT_DOUBLE_EQ(idle.value(0, 0), 2.0 * (1.0 - 0.05));
}

TEST(Optimizer, GradientClipping) {
  Parameter a{"a", Mat::Zero(1, 2)}, b{"b", Mat::Zero(1, 1)};
  GradMap g;
  g.emplace(&a, (Mat(1, 2) << 3.0, 0.0).finished());
  g.emplace(&b, (Mat(1, 1) << 4.0).finished());
  EXPECT_DOUBLE_EQ(clip_gradients(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.at(&b)(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_NEAR(g.at(&a)(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(g.at(&b)(0, 0), 0.8, 1e-15);
  g.at(&b)(0, 0) = std::nan("");
  EXPECT_THROW((void)clip_gradients(g, 1.0), NonFiniteError);
}

class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("train");
    DatasetOptions o;
    o.seed = 11;
    o.videos = 24;
    o.images = 12;
    o.frames = kFrames;
    o.height = kHeight;
    o.width = kWidth;
    (void)write_dataset(dir_->path() / "data", o);
    TrainConfig c = config("backbone");
    c.backbone_steps = 20;
    c.output = dir_->path() / "bb.ckpt";
    (void)run_training(c);
  }
  static void TearDownTestSuite() { delete dir_; }

  static TrainConfig config(const std::string& task) {
    TrainConfig c;
    c.task = task;
    c.dataset = dir_->path() / "data";
    c.backbone = tiny_backbone();
    c.control = tiny_control();
    c.batch_size = 2;
    c.warmup_steps = 2;
    c.stage1_steps = 4;
    c.stage2_steps = 2;
    c.edit_steps = 3;
    return c;
  }
  static std::filesystem::path path(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* TinyTraining::dir_ = nullptr;

TEST_F(TinyTraining, BackboneLossDecreases) {
  std::vector<double> medians;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig c = config("backbone");
    c.seed = seed;
    c.backbone_steps = 200;
    c.batch_size = 2;
    const TrainResult r = run_training(c);
    ASSERT_EQ(r.losses.size(), 200u);
    const double first = std::accumulate(r.losses.begin(), r.losses.begin() + 20, 0.0) / 20;
    const double last = std::accumulate(r.losses.end() - 20, r.losses.end(), 0.0) / 20;
    medians.push_back(last - first);
  }
  std::sort(medians.begin(), medians.end());
  EXPECT_LT(medians[1], 0.0);
}

TEST_F(TinyTraining, GenerationKeepsBackboneFrozenAndLogs) {
  TrainConfig c = config("generation");
  c.init = path("bb.ckpt");
  c.output = path("gen.ckpt");
  c.metrics_log = path("gen.csv");
  const TrainResult r = run_training(c);
  EXPECT_EQ(r.backbone_hash_before, r.backbone_hash_after);
  EXPECT_EQ(backbone_hash(load_checkpoint(path("gen.ckpt")).backbone),
            backbone_hash(load_checkpoint(path("bb.ckpt")).backbone));
  std::ifstream log(path("gen.csv"));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss,lr,stage");
  int rows = 0;
  std::vector<std::string> stages;
  while (std::getline(log, line)) {
    ++rows;
    stages.push_back(line.substr(line.rfind(',') + 1));
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(stages.front(), "gen-stage1");
  EXPECT_EQ(stages.back(), "gen-stage2");
  const CheckpointData data = read_checkpoint(path("gen.ckpt"));
  EXPECT_EQ(data.meta.at("task"), "generation");
  EXPECT_EQ(data.meta.at("steps"), 6);
}

TEST_F(TinyTraining, SameSeedSameLossTrace) {
  TrainConfig c = config("generation");
  c.init = path("bb.ckpt");
  c.seed = 5;
  EXPECT_EQ(run_training(c).losses, run_training(c).losses);
}

TEST_F(TinyTraining, StageOrderingIsEnforced) {
  TrainConfig gen = config("generation");
  EXPECT_THROW((void)run_training(gen), CheckpointError);

  TrainConfig edit = config("editing");
  EXPECT_THROW((void)run_training(edit), CheckpointError);
  edit.init = path("bb.ckpt");
  EXPECT_THROW((void)run_training(edit), CheckpointError);
  edit.edit_from_scratch = true;
  const TrainResult scratch = run_training(edit);
  EXPECT_TRUE(scratch.model.insertion.has_value());
  EXPECT_EQ(scratch.backbone_hash_before, scratch.backbone_hash_after);
}

TEST_F(TinyTraining, EditingStartsFromGenerationWeights) {
  TrainConfig gen = config("generation");
  gen.init = path("bb.ckpt");
  gen.output = path("gen_for_edit.ckpt");
  (void)run_training(gen);
  const SketchVideoModel g = load_checkpoint(gen.output);

  TrainConfig edit = config("editing");
  edit.init = gen.output;
  edit.edit_steps = 0;
  const TrainResult e = run_training(edit);
  ASSERT_TRUE(e.model.control && e.model.insertion);
  EXPECT_EQ(e.model.control->blocks[1].copy.ff1.weight.value, g.control->blocks[1].copy.ff1.weight.value);
  EXPECT_EQ(e.model.insertion->blocks[0].q.weight.value, e.model.backbone.blocks[0].q.weight.value);

  TrainConfig again = edit;
  again.init = path("edit_init.ckpt");
  save_checkpoint(again.init, e.model, {});
  EXPECT_THROW((void)run_training(again), CheckpointError);
}

TEST_F(TinyTraining, UnmaskedEditIgnoresTheSketchBranch) {
  TrainConfig gen = config("generation");
  gen.init = path("bb.ckpt");
  TrainConfig edit = config("editing");
  edit.init = path("gen_unmasked.ckpt");
  gen.output = edit.init;
  (void)run_training(gen);
  edit.edit_steps = 2;
  SketchVideoModel model = run_training(edit).model;
  randomize(model, 3, 0.05);

  DatasetLoader videos(edit.dataset, SampleKind::Video, 0);
  const StoredSample s = videos.next();
  std::mt19937_64 rng(1);
  TrainExample a = make_edit_example(s, rng, 0.0);
  a.cond.edit->mask.setZero();
  a.cond.edit->masked_latent = a.x0;
  TrainExample b = a;
  b.cond.sketches = resolve_sketches(two_sketches(9), kFrames, kHeight, kWidth);
  std::mt19937_64 eps_rng(2);
  const Mat eps = gaussian(static_cast<int>(a.x0.rows()), static_cast<int>(a.x0.cols()), eps_rng);
  Tape ta(false), tb(false);
  const double la = ta.value(example_loss(ta, model, a, 400, eps))(0, 0);
  const double lb = tb.value(example_loss(tb, model, b, 400, eps))(0, 0);
  EXPECT_NEAR(la, lb, 1e-12);
}
