#include "sketchdit/codec.hpp"
#include "sketchdit/data.hpp"
#include "sketchdit/errors.hpp"
#include "sketchdit/train.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace sketchdit;
using sketchdit::testing::TempDir;

TEST(Scenes, SameSeedSameClipAndPrompt) {
  const auto a = generate_scene(42), b = generate_scene(42);
  EXPECT_EQ(a.clip, b.clip);
  EXPECT_EQ(a.spec.prompt(), b.spec.prompt());
  EXPECT_NE(generate_scene(43).clip, a.clip);
}

TEST(Scenes, EmptySceneIsSolidBackground) {
  SceneSpec s;
  s.background = "gray";
  const VideoClip c = render_scene(s);
  const auto bg = color_rgb("gray");
  for (int t = 0; t < c.frames; ++t)
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x)
        for (int ch = 0; ch < 3; ++ch) ASSERT_NEAR(c.at(t, y, x, ch), bg[ch], 1.0 / 255);
  EXPECT_EQ(s.prompt(), "empty gray background");
}

TEST(Scenes, ShapesStayInFrameAndQuantised) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const SceneSpec s = random_scene(seed);
    ASSERT_GE(s.shapes.size(), 1u);
    ASSERT_LE(s.shapes.size(), 2u);
    for (const auto& sh : s.shapes) {
      const double r = sh.size / 2;
      for (int t : {0, s.frames - 1}) {
        const double cx = sh.x + sh.vx * t, cy = sh.y + sh.vy * t;
        EXPECT_GE(cx - r, -1e-9) << seed;
        EXPECT_LE(cx + r, s.width + 1e-9) << seed;
        EXPECT_GE(cy - r, -1e-9) << seed;
        EXPECT_LE(cy + r, s.height + 1e-9) << seed;
      }
    }
  }
  const VideoClip c = generate_scene(3).clip;
  for (double v : c.pixels) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
  }
}

TEST(Scenes, JsonRoundTrip) {
  const SceneSpec s = random_scene(9);
  nlohmann::json j = s;
  const SceneSpec back = j.get<SceneSpec>();
  EXPECT_EQ(render_scene(back), render_scene(s));
  EXPECT_THROW((void)shape_kind_from_string("hexagon"), std::exception);
}

TEST(Scenes, VelocityFollowsTheShape) {
  SceneSpec s;
  ShapeSpec sh;
  sh.x = 10;
  sh.y = 16;
  sh.vx = 1.0;
  s.shapes = {sh};
  const auto v = scene_velocity(s);
  const auto on = v(0, Rect{6, 12, 8, 8});
  EXPECT_DOUBLE_EQ(on[0], 1.0);
  EXPECT_DOUBLE_EQ(on[1], 0.0);
  const auto off = v(0, Rect{24, 0, 8, 8});
  EXPECT_EQ(off[0], 0.0);
}

TEST(Sketches, EdgesOfASquare) {
  SceneSpec s;
  ShapeSpec sh;
  sh.color = "white";
  sh.x = 16;
  sh.y = 16;
  sh.size = 12;
  s.shapes = {sh};
  const VideoClip c = render_scene(s);
  const BinaryMap e = extract_sketch(c, 0);
  EXPECT_GT(e.count(), 20u);
  EXPECT_EQ(e.at(16, 16), 0);  // flat interior
  EXPECT_EQ(e.at(1, 1), 0);    // flat background
  EXPECT_EQ(e.at(16, 10), 1);  // left edge
  EXPECT_EQ(extract_sketch(VideoClip(1, 8, 8, 0.5), 0).count(), 0u);
}

TEST(Keyframes, DistinctLatentFramesAndSorted) {
  std::mt19937_64 rng(1);
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = sample_keyframes(17, 2, rng);
    ASSERT_EQ(k.size(), 2u);
    ASSERT_LT(k[0], k[1]);
    ASSERT_NE(codec::latent_frame_of(k[0]), codec::latent_frame_of(k[1]));
    seen.insert({k[0], k[1]});
  }
  EXPECT_GT(seen.size(), 100u);
  EXPECT_EQ(sample_keyframes(17, 1, rng).size(), 1u);
  EXPECT_THROW((void)sample_keyframes(1, 2, rng), RangeError);
  EXPECT_THROW((void)sample_keyframes(17, 3, rng), RangeError);
}

TEST(Masks, SampledMasksAreValid) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const SceneSpec s = random_scene(i);
    const MaskSpec m = sample_edit_mask(rng, s);
    const double frac = static_cast<double>(m.rect.w) * m.rect.h / (s.width * s.height);
    EXPECT_GE(frac, 0.04);
    EXPECT_LE(frac, 0.5);
    EXPECT_GE(m.rect.x, 0);
    EXPECT_LE(m.rect.x + m.rect.w, s.width);
    if (m.movement == Movement::Linear) EXPECT_TRUE(m.endpoint.has_value());
    const MaskTrack t = mask_rectangle_track(m, s.frames, s.height, s.width, scene_velocity(s));
    EXPECT_EQ(t.latent.frames, 5);
  }
}

TEST(Png, RoundTrips) {
  TempDir dir("png");
  const VideoClip c = generate_scene(4).clip;
  write_png_rgb(dir.path() / "f.png", c, 3);
  const PngImage img = read_png(dir.path() / "f.png");
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(clip_from_pngs({img}), c.frame(3));
  const BinaryMap s = sketchdit::testing::random_sketch(16, 24, 2);
  EXPECT_EQ(sketch_from_png(decode_png(encode_png_gray(s))), s);
  write_frame_directory(dir.path() / "frames", c);
  EXPECT_EQ(read_frame_directory(dir.path() / "frames"), c);
  EXPECT_THROW((void)decode_png({1, 2, 3}), std::exception);
}

class SmallCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("corpus");
    DatasetOptions o;
    o.seed = 7;
    o.videos = 20;
    o.images = 10;
    index_ = write_dataset(dir_->path(), o);
  }
  static void TearDownTestSuite() { delete dir_; }
  static TempDir* dir_;
  static DatasetIndex index_;
};

TempDir* SmallCorpus::dir_ = nullptr;
DatasetIndex SmallCorpus::index_;

TEST_F(SmallCorpus, IndexMatchesDisk) {
  const DatasetIndex back = read_dataset_index(dir_->path());
  ASSERT_EQ(back.samples.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(back.samples[i].id, index_.samples[i].id);
    EXPECT_EQ(back.samples[i].prompt, index_.samples[i].prompt);
  }
  EXPECT_EQ(back.samples[25].kind, SampleKind::Image);
  EXPECT_EQ(back.samples[25].frames, 1);
}

TEST_F(SmallCorpus, SketchesAlignWithFrames) {
  for (const auto& e : index_.samples) {
    const StoredSample s = read_sample(dir_->path(), e);
    ASSERT_EQ(static_cast<int>(s.sketches.size()), s.clip.frames);
    for (int t = 0; t < s.clip.frames; ++t) ASSERT_EQ(s.sketches[t], extract_sketch(s.clip, t)) << e.id << " t=" << t;
    if (e.kind == SampleKind::Video) {
      EXPECT_EQ(s.clip, render_scene(s.scene));
    } else {
      EXPECT_EQ(s.clip, render_frame(s.scene, e.declared_time));
    }
  }
}

TEST_F(SmallCorpus, LoaderIsDeterministicAndSplits) {
  DatasetLoader a(dir_->path(), SampleKind::Video, 3, 0.1), b(dir_->path(), SampleKind::Video, 3, 0.1);
  EXPECT_EQ(a.order(), b.order());
  EXPECT_EQ(a.size(), 18u);
  DatasetLoader held(dir_->path(), SampleKind::Video, 3, 0.1, true);
  EXPECT_EQ(held.size(), 2u);
  for (std::size_t i : held.order())
    for (std::size_t j : a.order()) EXPECT_NE(i, j);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(a.next().entry.id, b.next().entry.id);
  EXPECT_THROW((void)held.at(2), RangeError);
}

TEST_F(SmallCorpus, TrainingExamplesPairSketchWithItsFrame) {
  DatasetLoader videos(dir_->path(), SampleKind::Video, 1);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    const StoredSample s = videos.next();
    const TrainExample ex = make_generation_example(s, rng, 0.0);
    ASSERT_TRUE(ex.cond.sketches.has_value());
    const SketchCondition& sc = *ex.cond.sketches;
    // Every sketch latent must be the encoded sketch of some frame in its keyframe group.
    for (int k = 0; k < sc.count(); ++k) {
      const Mat enc = sc.latents.middleRows(k * 16, 16);
      bool found = false;
      for (int t = 0; t < s.clip.frames && !found; ++t) {
        if (codec::latent_frame_of(t) == sc.key_frames[k] && codec::encode_sketch(extract_sketch(s.clip, t)) == enc)
          found = true;
      }
      EXPECT_TRUE(found);
    }
  }
  DatasetLoader images(dir_->path(), SampleKind::Image, 1);
  const StoredSample img = images.next();
  const TrainExample ex = make_generation_example(img, rng, 0.0);
  EXPECT_EQ(ex.cond.layout.frames(), 1);
  EXPECT_EQ(ex.cond.layout.time_positions[0], codec::latent_frame_of(img.entry.declared_time));
}

TEST_F(SmallCorpus, CorruptIndexIsReported) {
  TempDir bad("bad_corpus");
  std::ofstream(bad.path() / "index.json") << "{\"version\": 1";
  EXPECT_THROW((void)read_dataset_index(bad.path()), DataError);
  EXPECT_THROW((void)read_dataset_index(bad.path() / "nope"), DataError);
}
