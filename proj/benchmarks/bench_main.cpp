#include "sketchdit/checkpoint.hpp"
#include "sketchdit/codec.hpp"
#include "sketchdit/data.hpp"
#include "sketchdit/eval.hpp"
#include "sketchdit/pipeline.hpp"
#include "sketchdit/train.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace sketchdit;

namespace {

VideoClip noise_clip(int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VideoClip c(frames, 32, 32);
  for (double& v : c.pixels) v = u(rng);
  return c;
}

KeyframeSketchSet sketches() {
  KeyframeSketchSet s;
  const VideoClip c = generate_scene(5).clip;
  s.sketches = {extract_sketch(c, 0), extract_sketch(c, 16)};
  s.time_points = {0, 16};
  return s;
}

SketchVideoModel toy(bool control, bool insertion) {
  ModelSpec spec{BackboneConfig::toy(), std::nullopt, insertion};
  if (control || insertion) spec.control = ControlConfig{};
  return build_model(spec, 1);
}

}  // namespace

static void BM_EncodeVideo(benchmark::State& state) {
  const VideoClip c = noise_clip(17, 1);
  for (auto _ : state) benchmark::DoNotOptimize(codec::encode_video(c));
}
BENCHMARK(BM_EncodeVideo);

static void BM_DecodeVideo(benchmark::State& state) {
  const LatentVideo l = codec::encode_video(noise_clip(17, 2));
  for (auto _ : state) benchmark::DoNotOptimize(codec::decode_video(l));
}
BENCHMARK(BM_DecodeVideo);

static void BM_RenderScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(seed++));
}
BENCHMARK(BM_RenderScene)->Unit(benchmark::kMillisecond);

static void BM_Forward(benchmark::State& state) {
  const bool control = state.range(0) > 0;
  const SketchVideoModel m = toy(control, false);
  std::optional<KeyframeSketchSet> s;
  if (control) s = sketches();
  const Conditioning c = make_conditioning("a red square moves right", s, 17, 32, 32);
  std::mt19937_64 rng(3);
  const Mat z = gaussian(80, codec::kChannels, rng);
  for (auto _ : state) benchmark::DoNotOptimize(predict_velocity(m, z, 500, c));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->ArgName("control")->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  SketchVideoModel m = toy(true, false);
  const Conditioning c = make_conditioning("a red square moves right", sketches(), 17, 32, 32);
  std::mt19937_64 rng(4);
  const Mat z = gaussian(80, codec::kChannels, rng), target = gaussian(80, codec::kChannels, rng);
  for (auto _ : state) {
    Tape t;
    t.backward(ops::mse(t, forward_velocity(t, m, z, 500, c), target));
    GradMap g;
    t.accumulate_param_grads(g);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Generate(benchmark::State& state) {
  const SketchVideoModel m = toy(true, false);
  GenerateRequest req;
  req.prompt = "a blue circle moves left";
  req.sketches = sketches();
  req.sampler.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(generate_video(m, req));
}
BENCHMARK(BM_Generate)->Arg(10)->Arg(50)->ArgName("steps")->Unit(benchmark::kMillisecond);

static void BM_Edit(benchmark::State& state) {
  const SketchVideoModel m = toy(true, true);
  EditRequest req;
  req.source = generate_scene(7).clip;
  req.prompt = "a green triangle";
  req.sketches = sketches();
  MaskSpec spec;
  spec.rect = {8, 8, 16, 16};
  spec.last_frame = 16;
  req.track = mask_rectangle_track(spec, 17, 32, 32);
  req.sampler.steps = 50;
  for (auto _ : state) benchmark::DoNotOptimize(edit_video(m, req));
}
BENCHMARK(BM_Edit)->Unit(benchmark::kMillisecond);

static void BM_EdgeF1(benchmark::State& state) {
  const VideoClip c = generate_scene(9).clip;
  const BinaryMap a = extract_sketch(c, 0), b = extract_sketch(c, 4);
  for (auto _ : state) benchmark::DoNotOptimize(edge_f1(a, b));
}
BENCHMARK(BM_EdgeF1);

static void BM_TemporalConsistency(benchmark::State& state) {
  const VideoClip c = generate_scene(10).clip;
  for (auto _ : state) benchmark::DoNotOptimize(temporal_consistency(c));
}
BENCHMARK(BM_TemporalConsistency);

static void BM_CheckpointRoundTrip(benchmark::State& state) {
  const SketchVideoModel m = toy(true, false);
  for (auto _ : state) benchmark::DoNotOptimize(parse_checkpoint(serialize_checkpoint(m, {})));
}
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
