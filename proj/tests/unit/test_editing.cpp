#include "sketchdit/codec.hpp"
#include "sketchdit/data.hpp"
#include "sketchdit/errors.hpp"
#include "sketchdit/pipeline.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace sketchdit;
using json = nlohmann::json;

namespace {

std::optional<Rect> rect_at(const MaskTrack& m, int t) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(t, y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace

TEST(MaskSpecJson, ParsesAllMovements) {
  const MaskSpec f = mask_spec_from_json(json::parse(R"({"rect":[1,2,8,6],"movement":"fixed","frames":[0,16]})"));
  EXPECT_EQ(f.rect, (Rect{1, 2, 8, 6}));
  EXPECT_EQ(f.movement, Movement::Fixed);
  EXPECT_EQ(f.last_frame, 16);
  const MaskSpec l = mask_spec_from_json(
      json::parse(R"({"rect":[0,0,8,8],"movement":"linear","endpoint":[16,8,8,8],"frames":[2,10]})"));
  ASSERT_TRUE(l.endpoint);
  EXPECT_EQ(l.endpoint->x, 16);
  EXPECT_EQ(mask_spec_from_json(mask_spec_to_json(l)).endpoint, l.endpoint);
  EXPECT_EQ(mask_spec_from_json(json::parse(R"({"rect":[0,0,4,4],"movement":"flow","frames":[0,0]})")).movement,
            Movement::Flow);
}

TEST(MaskSpecJson, RejectsSchemaViolations) {
  for (const char* bad : {
           R"([1,2,3])",
           R"({"rect":[1,2,3],"movement":"fixed","frames":[0,1]})",
           R"({"rect":[1,2,0,3],"movement":"fixed","frames":[0,1]})",
           R"({"rect":[1,2,3,3],"movement":"spin","frames":[0,1]})",
           R"({"rect":[1,2,3,3],"movement":"linear","frames":[0,1]})",
           R"({"rect":[1,2,3,3],"movement":"fixed","frames":[2,1]})",
           R"({"rect":[1,2,3,3],"movement":"fixed","frames":[0,1],"colour":"red"})",
           R"({"rect":[1.5,2,3,3],"movement":"fixed","frames":[0,1]})",
           R"({"rect":[1,2,3,3],"frames":[0,1]})",
       }) {
    EXPECT_THROW((void)mask_spec_from_json(json::parse(bad)), DataError) << bad;
  }
}

TEST(MaskTracks, FixedRectangleOnlyInsideFrameRange) {
  MaskSpec s;
  s.rect = {4, 4, 10, 6};
  s.first_frame = 3;
  s.last_frame = 9;
  const MaskTrack m = mask_rectangle_track(s, 17, 32, 32);
  for (int t = 0; t < 17; ++t) {
    const auto r = rect_at(m, t);
    if (t < 3 || t > 9) {
      EXPECT_FALSE(r) << t;
    } else {
      EXPECT_EQ(r, s.rect) << t;
    }
  }
  EXPECT_EQ(m.latent.at(0, 0, 0), 0);  // frame 0 is untouched
  EXPECT_EQ(m.latent.at(1, 0, 0), 1);  // frames 1..4 hold frame 3
  EXPECT_EQ(m.latent.at(1, 0, 2), 0);
}

TEST(MaskTracks, LinearInterpolatesCorners) {
  MaskSpec s;
  s.rect = {0, 0, 8, 8};
  s.movement = Movement::Linear;
  s.endpoint = Rect{16, 8, 12, 8};
  s.first_frame = 0;
  s.last_frame = 16;
  const MaskTrack m = mask_rectangle_track(s, 17, 32, 32);
  EXPECT_EQ(rect_at(m, 0), s.rect);
  EXPECT_EQ(rect_at(m, 16), s.endpoint);
  EXPECT_EQ(rect_at(m, 8), (Rect{8, 4, 10, 8}));
  EXPECT_EQ(rect_at(m, 3), (Rect{3, 2, 9, 8}));  // 0.1875 of the way, rounded
}

TEST(MaskTracks, FlowFollowsTheObject) {
  SceneSpec scene;
  ShapeSpec sh;
  sh.x = 8;
  sh.y = 16;
  sh.size = 10;
  sh.vx = 1.0;
  scene.shapes = {sh};
  MaskSpec s;
  s.rect = {4, 12, 8, 8};
  s.movement = Movement::Flow;
  s.first_frame = 0;
  s.last_frame = 16;
  const MaskTrack m = mask_rectangle_track(s, 17, 32, 32, scene_velocity(scene));
  for (int t = 0; t < 17; ++t) EXPECT_EQ(rect_at(m, t), (Rect{4 + t, 12, 8, 8})) << t;
  EXPECT_THROW((void)mask_rectangle_track(s, 17, 32, 32), DataError);
}

TEST(MaskTracks, RectanglesAreClippedToBounds) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pos(-20, 40), size(1, 30);
  for (int i = 0; i < 300; ++i) {
    MaskSpec s;
    s.rect = {pos(rng), pos(rng), size(rng), size(rng)};
    s.movement = static_cast<Movement>(i % 3);
    s.endpoint = Rect{pos(rng), pos(rng), size(rng), size(rng)};
    s.first_frame = 0;
    s.last_frame = 16;
    VelocityProvider fast = [](int, const Rect&) { return std::array<double, 2>{3.0, -2.5}; };
    for (int frames : {1, 5, 17}) {
      for (int t = 0; t < frames; ++t) {
        const auto r = track_rect_at(s, t, 32, 32, fast);
        if (!r) continue;
        EXPECT_GE(r->x, 0);
        EXPECT_GE(r->y, 0);
        EXPECT_LE(r->x + r->w, 32);
        EXPECT_LE(r->y + r->h, 32);
      }
      EXPECT_NO_THROW((void)mask_rectangle_track(s, frames, 32, 32, fast));
    }
  }
}

TEST(MaskVideo, EmptyMaskLeavesLatentUnchanged) {
  const VideoClip c = sketchdit::testing::random_clip(9, 16, 16, 2);
  MaskSpec s;
  s.rect = {0, 0, 4, 4};
  s.first_frame = 20;
  s.last_frame = 30;
  const MaskTrack track = mask_rectangle_track(s, 9, 16, 16);
  const MaskedVideoLatent mv = mask_video(c, track);
  EXPECT_EQ(mv.latent.values, codec::encode_video(c).values);
  EXPECT_EQ(mv.mask.as_weights().sum(), 0.0);
}

TEST(MaskVideo, MaskedPixelsAreZeroed) {
  const VideoClip c = sketchdit::testing::random_clip(5, 16, 16, 2);
  MaskSpec s;
  s.rect = {2, 3, 5, 4};
  s.first_frame = 0;
  s.last_frame = 4;
  const MaskTrack track = mask_rectangle_track(s, 5, 16, 16);
  const VideoClip back = codec::decode_video(mask_video(c, track).latent);
  for (int t = 0; t < 5; ++t)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(back.at(t, y, x, ch), track.at(t, y, x) ? 0.0 : c.at(t, y, x, ch));
  EXPECT_THROW((void)mask_video(sketchdit::testing::random_clip(9, 16, 16, 1), track), ShapeError);
}

TEST(Fusion, BranchConcatenation) {
  Tape t(false);
  Mat c = Mat::Constant(3, 2, 2.0), v = Mat::Constant(3, 2, 5.0);
  ColVec m(3);
  m << 1, 0, 1;
  const Mat out = t.value(fuse_branches(t, t.constant(c), t.constant(v), m));
  ASSERT_EQ(out.cols(), 4);
  EXPECT_EQ(out.row(0), (RowVec(4) << 2, 2, 0, 0).finished());
  EXPECT_EQ(out.row(1), (RowVec(4) << 0, 0, 5, 5).finished());
  EXPECT_THROW((void)fuse_branches(t, t.constant(c), t.constant(v), ColVec::Ones(2)), ShapeError);
}

TEST(Widening, KeepsSketchRowsAndZeroesVideoRows) {
  const Backbone bb = Backbone::create(sketchdit::testing::tiny_backbone(), 1);
  ControlBranch cb = ControlBranch::create(bb, sketchdit::testing::tiny_control(), 2);
  const Mat before = cb.blocks[0].out_up.weight.value;
  widen_for_editing(cb, 3, false);
  const Mat& after = cb.blocks[0].out_up.weight.value;
  ASSERT_EQ(after.rows(), 2 * before.rows());
  EXPECT_EQ(after.topRows(before.rows()), before);
  EXPECT_EQ(after.bottomRows(before.rows()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(widen_for_editing(cb, 3, false), ShapeError);
  ControlBranch fresh = ControlBranch::create(bb, sketchdit::testing::tiny_control(), 2);
  widen_for_editing(fresh, 3, true);
  EXPECT_GT(fresh.blocks[0].out_up.weight.value.bottomRows(before.rows()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(InsertionBranch, CopiesControlledBackboneBlocks) {
  const Backbone bb = Backbone::create(sketchdit::testing::tiny_backbone(), 1);
  const VideoInsertionBranch vib = VideoInsertionBranch::create(bb, sketchdit::testing::tiny_control());
  ASSERT_EQ(vib.blocks.size(), 2u);
  EXPECT_EQ(vib.blocks[1].q.weight.value, bb.blocks[2].q.weight.value);
  EXPECT_EQ(vib.video_embed.weight.value, bb.patch_embed.weight.value);
  EXPECT_TRUE(vib.blocks[0].ff1.weight.trainable);
  EXPECT_NE(vib.blocks[0].ff1.weight.name, bb.blocks[0].ff1.weight.name);
}

TEST(PixelBlend, CopiesUneditedPixels) {
  const VideoClip a = sketchdit::testing::random_clip(5, 8, 8, 1), b = sketchdit::testing::random_clip(5, 8, 8, 2);
  MaskSpec s;
  s.rect = {0, 0, 4, 8};
  s.last_frame = 4;
  const MaskTrack m = mask_rectangle_track(s, 5, 8, 8);
  const VideoClip out = pixel_blend(a, b, m);
  EXPECT_EQ(out.at(2, 3, 1, 0), b.at(2, 3, 1, 0));
  EXPECT_EQ(out.at(2, 3, 6, 0), a.at(2, 3, 6, 0));
}
