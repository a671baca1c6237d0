#pragma once

#include "sketchdit/control.hpp"
#include "sketchdit/editing.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sketchdit {

// ---------------------------------------------------------------------------
// PNG I/O (8-bit). Values are rounded to the nearest 1/255.

void write_png_rgb(const std::filesystem::path& path, const VideoClip& clip, int frame);
void write_png_gray(const std::filesystem::path& path, const BinaryMap& map);
void write_png_gray(const std::filesystem::path& path, const Mat& values);  // values in [0,1]
[[nodiscard]] std::vector<std::uint8_t> encode_png_rgb(const VideoClip& clip, int frame);
[[nodiscard]] std::vector<std::uint8_t> encode_png_gray(const BinaryMap& map);

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3 after normalisation (alpha is dropped)
  std::vector<std::uint8_t> pixels;
};

[[nodiscard]] PngImage read_png(const std::filesystem::path& path);
[[nodiscard]] PngImage decode_png(const std::vector<std::uint8_t>& bytes);
/// Any PNG as a binary sketch: a pixel is set when its luminance exceeds one half.
[[nodiscard]] BinaryMap sketch_from_png(const PngImage& img);
[[nodiscard]] VideoClip clip_from_pngs(const std::vector<PngImage>& frames);
/// Reads frames/%05d.png (or any sorted *.png) from a directory.
[[nodiscard]] VideoClip read_frame_directory(const std::filesystem::path& dir);
void write_frame_directory(const std::filesystem::path& dir, const VideoClip& clip);

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ShapeKind { Square, Circle, Triangle };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Square;
  std::string color = "red";
  double size = 12.0;     // side length / diameter in pixels
  double x = 16.0;        // centre at frame 0
  double y = 16.0;
  double vx = 0.0;        // pixels per frame
  double vy = 0.0;
};

struct SceneSpec {
  std::vector<ShapeSpec> shapes;
  std::string background = "black";
  int frames = 17;
  int height = 32;
  int width = 32;

  [[nodiscard]] std::string prompt() const;
};

[[nodiscard]] std::string to_string(ShapeKind k);
[[nodiscard]] ShapeKind shape_kind_from_string(const std::string& s);
[[nodiscard]] std::array<double, 3> color_rgb(const std::string& name);
[[nodiscard]] const std::vector<std::string>& shape_colors();

void to_json(nlohmann::json& j, const ShapeSpec& s);
void from_json(const nlohmann::json& j, ShapeSpec& s);
void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

/// Random 1-2 shape scene whose shapes stay fully inside the frame.
[[nodiscard]] SceneSpec random_scene(std::uint64_t seed, int frames = 17, int height = 32, int width = 32);

/// Anti-aliased render (4x4 supersampling), quantised to 8-bit levels.
[[nodiscard]] VideoClip render_scene(const SceneSpec& scene);
[[nodiscard]] VideoClip render_frame(const SceneSpec& scene, double time);

struct GeneratedScene {
  VideoClip clip;
  SceneSpec spec;
};

[[nodiscard]] GeneratedScene generate_scene(std::uint64_t seed, int frames = 17, int height = 32, int width = 32);

/// Mean ground-truth motion of the shape pixels under `rect` at `frame`;
/// background contributes nothing.
[[nodiscard]] VelocityProvider scene_velocity(const SceneSpec& scene);

// ---------------------------------------------------------------------------
// Sketches, keyframes and masks

/// Sobel magnitude on luminance, thresholded at a quarter of its maximum.
[[nodiscard]] BinaryMap extract_sketch(const VideoClip& clip, int frame);

/// k distinct time points in [0, frames), uniform over pairs whose latent frames differ, sorted.
[[nodiscard]] std::vector<int> sample_keyframes(int frames, int k, std::mt19937_64& rng);

[[nodiscard]] MaskSpec sample_edit_mask(std::mt19937_64& rng, const SceneSpec& scene);

// ---------------------------------------------------------------------------
// On-disk corpus: dataset/{index.json, samples/<id>/{frames/%05d.png, sketch_%d.png, scene.json}}

enum class SampleKind { Image, Video };

struct SampleEntry {
  std::string id;
  SampleKind kind = SampleKind::Video;
  std::uint64_t seed = 0;
  int frames = 17;
  int declared_time = 0;  // image samples: the video time the frame was rendered at
  std::string prompt;
};

struct DatasetIndex {
  int version = 1;
  std::uint64_t seed = 0;
  int height = 32;
  int width = 32;
  int video_frames = 17;
  std::vector<SampleEntry> samples;
};

struct DatasetOptions {
  std::uint64_t seed = 0;
  int videos = 2000;
  int images = 4000;
  int frames = 17;
  int height = 32;
  int width = 32;
};

DatasetIndex write_dataset(const std::filesystem::path& root, const DatasetOptions& options);
[[nodiscard]] DatasetIndex read_dataset_index(const std::filesystem::path& root);

/// One stored sample with its clip, per-frame sketches and scene metadata.
struct StoredSample {
  SampleEntry entry;
  VideoClip clip;
  std::vector<BinaryMap> sketches;  // one per stored frame
  SceneSpec scene;
};

[[nodiscard]] StoredSample read_sample(const std::filesystem::path& root, const SampleEntry& entry);

/// Deterministic shuffled stream over one sample kind. The last `holdout_fraction`
/// of that kind is reserved for evaluation; `holdout_split` selects it.
class DatasetLoader {
 public:
  DatasetLoader(std::filesystem::path root, SampleKind kind, std::uint64_t seed, double holdout_fraction = 0.0,
                bool holdout_split = false);

  [[nodiscard]] std::size_t size() const { return order_.size(); }
  [[nodiscard]] const std::vector<std::size_t>& order() const { return order_; }
  [[nodiscard]] StoredSample next();
  [[nodiscard]] StoredSample at(std::size_t position) const;
  [[nodiscard]] const DatasetIndex& index() const { return index_; }

 private:
  std::filesystem::path root_;
  DatasetIndex index_;
  std::vector<std::size_t> members_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;

  void reshuffle();
};

}  // namespace sketchdit
