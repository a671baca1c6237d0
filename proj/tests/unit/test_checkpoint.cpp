#include "sketchdit/checkpoint.hpp"
#include "sketchdit/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace sketchdit;
using namespace sketchdit::testing;

namespace {

SketchVideoModel random_model(bool control, bool insertion, std::uint64_t seed) {
  SketchVideoModel m = build_model(tiny_spec(control, insertion), seed);
  randomize(m, seed + 1);
  // Checkpoints hold float32; keep values exactly representable.
  std::vector<Parameter*> ps;
  m.collect(ps);
  for (Parameter* p : ps) p->value = p->value.cast<float>().cast<double>();
  return m;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir("ckpt");
  for (auto [control, insertion] : {std::pair{false, false}, {true, false}, {true, true}}) {
    const SketchVideoModel m = random_model(control, insertion, 3);
    save_checkpoint(dir.path() / "a.ckpt", m, {{"note", "x"}});
    const SketchVideoModel back = load_checkpoint(dir.path() / "a.ckpt");
    save_checkpoint(dir.path() / "b.ckpt", back, {{"note", "x"}});
    EXPECT_EQ(read_all(dir.path() / "a.ckpt"), read_all(dir.path() / "b.ckpt"));
    EXPECT_EQ(back.control.has_value(), control);
    EXPECT_EQ(back.insertion.has_value(), insertion);
    EXPECT_EQ(back.parameter_count(), m.parameter_count());
    EXPECT_EQ(backbone_hash(back.backbone), backbone_hash(m.backbone));
  }
}

TEST(Checkpoint, LoadedModelPredictsTheSame) {
  const SketchVideoModel m = random_model(true, false, 4);
  const SketchVideoModel back = model_from_checkpoint(parse_checkpoint(serialize_checkpoint(m, {})));
  const Conditioning c = make_conditioning("red square", two_sketches(1), kFrames, kHeight, kWidth);
  std::mt19937_64 rng(1);
  const Mat z = gaussian(8, 768, rng);
  EXPECT_EQ(predict_velocity(back, z, 300, c), predict_velocity(m, z, 300, c));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = serialize_checkpoint(random_model(true, false, 5), {});
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW((void)parse_checkpoint(flipped), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW((void)parse_checkpoint(magic), CheckpointError);
  EXPECT_THROW((void)parse_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100)), CheckpointError);
  EXPECT_THROW((void)read_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST(Checkpoint, SpecHashTracksArchitecture) {
  ModelSpec a = tiny_spec(true);
  ModelSpec b = a;
  EXPECT_EQ(a.hash(), b.hash());
  b.control->placement = {1, 3};
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(ModelSpec::from_json(a.json()).hash(), a.hash());
  EXPECT_EQ(spec_of(build_model(a, 1)).hash(), a.hash());
}

TEST(Checkpoint, PartialLoadFillsLeadingRows) {
  const SketchVideoModel gen = random_model(true, false, 6);
  const CheckpointData data = parse_checkpoint(serialize_checkpoint(gen, {}));
  SketchVideoModel edit = build_model(tiny_spec(true, true), 9);
  const PartialLoadReport r = load_by_name(edit, data, "control.");
  EXPECT_TRUE(r.missing.empty());
  ASSERT_FALSE(r.row_prefix.empty());
  for (const auto& name : r.row_prefix) EXPECT_NE(name.find("out_up.weight"), std::string::npos) << name;
  const Mat& widened = edit.control->blocks[0].out_up.weight.value;
  EXPECT_EQ(widened.topRows(16), gen.control->blocks[0].out_up.weight.value);
  EXPECT_EQ(widened.bottomRows(16).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Checkpoint, BackboneExtraction) {
  const SketchVideoModel m = random_model(true, true, 7);
  const Backbone bb = backbone_from_checkpoint(parse_checkpoint(serialize_checkpoint(m, {})));
  EXPECT_EQ(backbone_hash(bb), backbone_hash(m.backbone));
}

TEST(Checkpoint, MetaRoundTrips) {
  const auto data = parse_checkpoint(serialize_checkpoint(random_model(false, false, 8), {{"stage", "backbone"}}));
  EXPECT_EQ(data.meta.at("stage"), "backbone");
  EXPECT_EQ(data.schedule.train_steps, 1000);
}
