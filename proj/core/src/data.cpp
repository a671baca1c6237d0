#include "sketchdit/data.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace fs = std::filesystem;

namespace sketchdit {

namespace {

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::vector<std::uint8_t> png_to_memory(const std::vector<std::uint8_t>& pixels, int width, int height, int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path.string());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing file " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

std::vector<std::uint8_t> encode_png_rgb(const VideoClip& clip, int frame) {
  if (frame < 0 || frame >= clip.frames) throw RangeError("frame index out of range");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(clip.height) * clip.width * 3);
  for (int y = 0; y < clip.height; ++y) {
    for (int x = 0; x < clip.width; ++x) {
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * clip.width + x) * 3 + c] = quantize(clip.at(frame, y, x, c));
    }
  }
  return png_to_memory(px, clip.width, clip.height, 3);
}

std::vector<std::uint8_t> encode_png_gray(const BinaryMap& map) {
  std::vector<std::uint8_t> px(map.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = map.bits[i] ? 255 : 0;
  return png_to_memory(px, map.width, map.height, 1);
}

void write_png_rgb(const fs::path& path, const VideoClip& clip, int frame) { write_bytes(path, encode_png_rgb(clip, frame)); }

void write_png_gray(const fs::path& path, const BinaryMap& map) { write_bytes(path, encode_png_gray(map)); }

void write_png_gray(const fs::path& path, const Mat& values) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(values.size()));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) px[r * values.cols() + c] = quantize(values(r, c));
  }
  write_bytes(path, png_to_memory(px, static_cast<int>(values.cols()), static_cast<int>(values.rows()), 1));
}

PngImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(std::string("png decode failed: ") + image.message);
  }
  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  PngImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = colour ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(std::string("png decode failed: ") + image.message);
  }
  return out;
}

PngImage read_png(const fs::path& path) {
  try {
    return decode_png(read_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

BinaryMap sketch_from_png(const PngImage& img) {
  BinaryMap m(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * img.channels;
      const double l = img.channels == 3 ? luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]) : img.pixels[i];
      m.at(y, x) = l > 127.5 ? 1 : 0;
    }
  }
  return m;
}

VideoClip clip_from_pngs(const std::vector<PngImage>& frames) {
  if (frames.empty()) throw DataError("no frames");
  VideoClip clip(static_cast<int>(frames.size()), frames[0].height, frames[0].width);
  for (int t = 0; t < clip.frames; ++t) {
    const PngImage& img = frames[t];
    if (img.width != clip.width || img.height != clip.height) throw ShapeError("frames differ in size");
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) {
        const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * img.channels;
        for (int c = 0; c < 3; ++c) clip.at(t, y, x, c) = img.pixels[i + (img.channels == 3 ? c : 0)] / 255.0;
      }
    }
  }
  return clip;
}

VideoClip read_frame_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a frame directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PngImage> frames;
  frames.reserve(files.size());
  for (const auto& f : files) frames.push_back(read_png(f));
  return clip_from_pngs(frames);
}

void write_frame_directory(const fs::path& dir, const VideoClip& clip) {
  fs::create_directories(dir);
  char name[32];
  for (int t = 0; t < clip.frames; ++t) {
    std::snprintf(name, sizeof(name), "%05d.png", t);
    write_png_rgb(dir / name, clip, t);
  }
}

// ---------------------------------------------------------------------------

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Triangle: return "triangle";
  }
  return "square";
}

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "square") return ShapeKind::Square;
  if (s == "circle") return ShapeKind::Circle;
  if (s == "triangle") return ShapeKind::Triangle;
  throw DataError("unknown shape kind '" + s + "'");
}

const std::vector<std::string>& shape_colors() {
  static const std::vector<std::string> colors = {"red", "green", "blue", "yellow", "cyan",
                                                  "magenta", "white", "orange", "purple"};
  return colors;
}

std::array<double, 3> color_rgb(const std::string& name) {
  static const std::map<std::string, std::array<double, 3>> table = {
      {"red", {1.0, 0.0, 0.0}},    {"green", {0.0, 1.0, 0.0}},  {"blue", {0.2, 0.3, 1.0}},
      {"yellow", {1.0, 1.0, 0.0}}, {"cyan", {0.0, 1.0, 1.0}},   {"magenta", {1.0, 0.0, 1.0}},
      {"white", {1.0, 1.0, 1.0}},  {"orange", {1.0, 0.5, 0.0}}, {"purple", {0.6, 0.2, 0.9}},
      {"black", {0.0, 0.0, 0.0}},  {"gray", {0.3, 0.3, 0.3}}};
  auto it = table.find(name);
  if (it == table.end()) throw DataError("unknown colour '" + name + "'");
  return it->second;
}

void to_json(nlohmann::json& j, const ShapeSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)}, {"color", s.color}, {"size", s.size}, {"x", s.x},
                     {"y", s.y},                   {"vx", s.vx},       {"vy", s.vy}};
}

void from_json(const nlohmann::json& j, ShapeSpec& s) {
  s.kind = shape_kind_from_string(j.at("kind").get<std::string>());
  s.color = j.at("color").get<std::string>();
  s.size = j.at("size").get<double>();
  s.x = j.at("x").get<double>();
  s.y = j.at("y").get<double>();
  s.vx = j.at("vx").get<double>();
  s.vy = j.at("vy").get<double>();
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"shapes", s.shapes}, {"background", s.background}, {"frames", s.frames},
                     {"height", s.height}, {"width", s.width},           {"prompt", s.prompt()}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.shapes = j.at("shapes").get<std::vector<ShapeSpec>>();
  s.background = j.at("background").get<std::string>();
  s.frames = j.at("frames").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
}

std::string SceneSpec::prompt() const {
  if (shapes.empty()) return "empty " + background + " background";
  std::string out;
  for (const ShapeSpec& s : shapes) {
    if (!out.empty()) out += ", ";
    out += s.color + " " + to_string(s.kind);
    if (std::abs(s.vx) < 1e-9 && std::abs(s.vy) < 1e-9) {
      out += " still";
    } else if (std::abs(s.vx) >= std::abs(s.vy)) {
      out += s.vx > 0 ? " moves right" : " moves left";
    } else {
      out += s.vy > 0 ? " moves down" : " moves up";
    }
  }
  return out;
}

SceneSpec random_scene(std::uint64_t seed, int frames, int height, int width) {
  std::mt19937_64 rng(splitmix(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneSpec scene;
  scene.frames = frames;
  scene.height = height;
  scene.width = width;
  scene.background = unit(rng) < 0.5 ? "black" : "gray";
  const int count = unit(rng) < 0.5 ? 1 : 2;
  std::vector<std::string> colors = shape_colors();
  std::shuffle(colors.begin(), colors.end(), rng);
  const double span = std::max(1, frames - 1);
  for (int i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    s.color = colors[i];
    s.size = 10.0 + 6.0 * unit(rng);
    const double r = s.size / 2.0 + 0.5;
    const int direction = std::uniform_int_distribution<int>(0, 4)(rng);  // still, left, right, up, down
    double speed = 0.5 + 0.5 * unit(rng);
    const double room = (direction <= 2 ? width : height) - 2.0 * r;
    speed = std::min(speed, std::max(0.0, room) / span);
    if (direction == 1) s.vx = -speed;
    if (direction == 2) s.vx = speed;
    if (direction == 3) s.vy = -speed;
    if (direction == 4) s.vy = speed;
    // Both the start and the end centre must keep the whole shape in frame.
    auto place = [&](double extent, double v) {
      const double lo = std::max(r, r - v * span);
      const double hi = std::min(extent - r, extent - r - v * span);
      if (hi < lo - 1e-9) return extent / 2.0;
      return hi <= lo ? lo : lo + (hi - lo) * unit(rng);
    };
    s.x = place(width, s.vx);
    s.y = place(height, s.vy);
    scene.shapes.push_back(s);
  }
  return scene;
}

namespace {

bool inside(const ShapeSpec& s, double cx, double cy, double px, double py) {
  const double h = s.size / 2.0;
  switch (s.kind) {
    case ShapeKind::Square: return std::abs(px - cx) <= h && std::abs(py - cy) <= h;
    case ShapeKind::Circle: return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= h * h;
    case ShapeKind::Triangle: {
      // Apex up, base down.
      if (py < cy - h || py > cy + h) return false;
      const double half_width = h * (py - (cy - h)) / (2.0 * h);
      return std::abs(px - cx) <= half_width;
    }
  }
  return false;
}

double coverage(const ShapeSpec& s, double cx, double cy, int x, int y) {
  constexpr int kSub = 4;
  int hits = 0;
  for (int sy = 0; sy < kSub; ++sy) {
    for (int sx = 0; sx < kSub; ++sx) {
      if (inside(s, cx, cy, x + (sx + 0.5) / kSub, y + (sy + 0.5) / kSub)) ++hits;
    }
  }
  return static_cast<double>(hits) / (kSub * kSub);
}

void render_into(const SceneSpec& scene, double time, VideoClip& clip, int frame) {
  const auto bg = color_rgb(scene.background);
  for (int y = 0; y < clip.height; ++y) {
    for (int x = 0; x < clip.width; ++x) {
      for (int c = 0; c < 3; ++c) clip.at(frame, y, x, c) = bg[c];
    }
  }
  for (const ShapeSpec& s : scene.shapes) {
    const auto col = color_rgb(s.color);
    const double cx = s.x + s.vx * time;
    const double cy = s.y + s.vy * time;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - s.size)));
    const int x1 = std::min(clip.width - 1, static_cast<int>(std::ceil(cx + s.size)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - s.size)));
    const int y1 = std::min(clip.height - 1, static_cast<int>(std::ceil(cy + s.size)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double a = coverage(s, cx, cy, x, y);
        if (a == 0.0) continue;
        for (int c = 0; c < 3; ++c) clip.at(frame, y, x, c) = (1.0 - a) * clip.at(frame, y, x, c) + a * col[c];
      }
    }
  }
  for (int y = 0; y < clip.height; ++y) {
    for (int x = 0; x < clip.width; ++x) {
      for (int c = 0; c < 3; ++c) clip.at(frame, y, x, c) = quantize(clip.at(frame, y, x, c)) / 255.0;
    }
  }
}

}  // namespace

VideoClip render_scene(const SceneSpec& scene) {
  codec::validate_clip_shape(scene.frames, scene.height, scene.width);
  VideoClip clip(scene.frames, scene.height, scene.width);
  for (int t = 0; t < scene.frames; ++t) render_into(scene, t, clip, t);
  return clip;
}

VideoClip render_frame(const SceneSpec& scene, double time) {
  VideoClip clip(1, scene.height, scene.width);
  render_into(scene, time, clip, 0);
  return clip;
}

GeneratedScene generate_scene(std::uint64_t seed, int frames, int height, int width) {
  GeneratedScene g;
  g.spec = random_scene(seed, frames, height, width);
  g.clip = render_scene(g.spec);
  return g;
}

VelocityProvider scene_velocity(const SceneSpec& scene) {
  return [scene](int frame, const Rect& rect) -> std::array<double, 2> {
    double sx = 0.0;
    double sy = 0.0;
    int n = 0;
    for (int y = rect.y; y < rect.y + rect.h; ++y) {
      for (int x = rect.x; x < rect.x + rect.w; ++x) {
        // Topmost shape covering the pixel centre owns its motion.
        const ShapeSpec* owner = nullptr;
        for (const ShapeSpec& s : scene.shapes) {
          if (inside(s, s.x + s.vx * frame, s.y + s.vy * frame, x + 0.5, y + 0.5)) owner = &s;
        }
        if (owner == nullptr) continue;
        sx += owner->vx;
        sy += owner->vy;
        ++n;
      }
    }
    if (n == 0) return {0.0, 0.0};
    return {sx / n, sy / n};
  };
}

// ---------------------------------------------------------------------------

BinaryMap extract_sketch(const VideoClip& clip, int frame) {
  if (frame < 0 || frame >= clip.frames) throw RangeError("frame index out of range");
  const int h = clip.height;
  const int w = clip.width;
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      lum[static_cast<std::size_t>(y) * w + x] =
          luminance(clip.at(frame, y, x, 0), clip.at(frame, y, x, 1), clip.at(frame, y, x, 2));
    }
  }
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return lum[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<double> mag(lum.size());
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * w + x] = m;
      peak = std::max(peak, m);
    }
  }
  BinaryMap out(h, w);
  if (peak < 1e-9) return out;
  const double tau = 0.25 * peak;
  for (std::size_t i = 0; i < mag.size(); ++i) out.bits[i] = mag[i] >= tau ? 1 : 0;
  return out;
}

std::vector<int> sample_keyframes(int frames, int k, std::mt19937_64& rng) {
  if (k < 1 || k > 2) throw RangeError("one or two keyframes");
  if (frames < 1) throw RangeError("empty clip");
  std::uniform_int_distribution<int> pick(0, frames - 1);
  if (k == 1) return {pick(rng)};
  if (codec::latent_frames(frames) < 2) throw RangeError("two keyframes need at least two latent frames");
  // Rejection keeps the pair uniform over admissible pairs.
  for (;;) {
    int a = pick(rng);
    int b = pick(rng);
    if (codec::latent_frame_of(a) == codec::latent_frame_of(b)) continue;
    if (a > b) std::swap(a, b);
    return {a, b};
  }
}

MaskSpec sample_edit_mask(std::mt19937_64& rng, const SceneSpec& scene) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int H = scene.height;
  const int W = scene.width;
  const double total = static_cast<double>(H) * W;
  MaskSpec spec;
  int w = 0;
  int h = 0;
  for (;;) {
    const double area = (0.04 + 0.46 * unit(rng)) * total;
    const double aspect = std::exp(std::log(0.5) + (std::log(2.0) - std::log(0.5)) * unit(rng));
    w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, W);
    h = std::clamp(static_cast<int>(std::lround(area / w)), 1, H);
    const double frac = w * h / total;
    if (frac >= 0.04 && frac <= 0.5) break;
  }
  auto place = [&](int extent, int size) { return std::uniform_int_distribution<int>(0, extent - size)(rng); };
  spec.rect = Rect{place(W, w), place(H, h), w, h};
  spec.movement = static_cast<Movement>(std::uniform_int_distribution<int>(0, 2)(rng));
  spec.first_frame = 0;
  spec.last_frame = scene.frames - 1;
  if (spec.movement == Movement::Linear) spec.endpoint = Rect{place(W, w), place(H, h), w, h};
  if (spec.movement == Movement::Flow && !scene.shapes.empty()) {
    // Start over one of the shapes so the box has motion to follow.
    const auto& s = scene.shapes[std::uniform_int_distribution<std::size_t>(0, scene.shapes.size() - 1)(rng)];
    spec.rect.x = std::clamp(static_cast<int>(std::lround(s.x - w / 2.0)), 0, W - w);
    spec.rect.y = std::clamp(static_cast<int>(std::lround(s.y - h / 2.0)), 0, H - h);
  }
  return spec;
}

// ---------------------------------------------------------------------------

namespace {

std::string kind_name(SampleKind k) { return k == SampleKind::Image ? "image" : "video"; }

SampleKind kind_from_name(const std::string& s) {
  if (s == "image") return SampleKind::Image;
  if (s == "video") return SampleKind::Video;
  throw DataError("unknown sample kind '" + s + "'");
}

nlohmann::json entry_json(const SampleEntry& e) {
  return {{"id", e.id},         {"kind", kind_name(e.kind)},        {"seed", e.seed},
          {"frames", e.frames}, {"declared_time", e.declared_time}, {"prompt", e.prompt}};
}

void write_sample(const fs::path& dir, const VideoClip& clip, const SceneSpec& scene, const SampleEntry& entry) {
  write_frame_directory(dir / "frames", clip);
  for (int t = 0; t < clip.frames; ++t) write_png_gray(dir / ("sketch_" + std::to_string(t) + ".png"), extract_sketch(clip, t));
  nlohmann::json meta = scene;
  meta["kind"] = kind_name(entry.kind);
  meta["declared_time"] = entry.declared_time;
  std::ofstream(dir / "scene.json") << meta.dump(2) << '\n';
}

}  // namespace

DatasetIndex write_dataset(const fs::path& root, const DatasetOptions& options) {
  if (options.videos < 0 || options.images < 0) throw DataError("sample counts must be non-negative");
  codec::validate_clip_shape(options.frames, options.height, options.width);
  fs::create_directories(root / "samples");
  DatasetIndex index;
  index.seed = options.seed;
  index.height = options.height;
  index.width = options.width;
  index.video_frames = options.frames;
  const int total = options.videos + options.images;
  char id[32];
  for (int i = 0; i < total; ++i) {
    SampleEntry e;
    e.kind = i < options.videos ? SampleKind::Video : SampleKind::Image;
    std::snprintf(id, sizeof(id), "%s_%06d", kind_name(e.kind).c_str(), e.kind == SampleKind::Video ? i : i - options.videos);
    e.id = id;
    e.seed = splitmix(options.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i));
    const SceneSpec scene = random_scene(e.seed, options.frames, options.height, options.width);
    VideoClip clip;
    if (e.kind == SampleKind::Video) {
      clip = render_scene(scene);
      e.frames = options.frames;
    } else {
      e.declared_time = static_cast<int>(splitmix(e.seed ^ 0xa5a5a5a5ULL) % static_cast<std::uint64_t>(options.frames));
      clip = render_frame(scene, e.declared_time);
      e.frames = 1;
    }
    e.prompt = scene.prompt();
    write_sample(root / "samples" / e.id, clip, scene, e);
    index.samples.push_back(e);
  }
  nlohmann::json j{{"version", index.version}, {"seed", index.seed},     {"height", index.height},
                   {"width", index.width},     {"video_frames", index.video_frames}};
  j["samples"] = nlohmann::json::array();
  for (const auto& e : index.samples) j["samples"].push_back(entry_json(e));
  std::ofstream(root / "index.json") << j.dump(1) << '\n';
  return index;
}

DatasetIndex read_dataset_index(const fs::path& root) {
  const fs::path p = root / "index.json";
  std::ifstream f(p);
  if (!f) throw DataError("missing dataset index " + p.string());
  DatasetIndex index;
  try {
    const auto j = nlohmann::json::parse(f);
    index.version = j.at("version").get<int>();
    if (index.version != 1) throw DataError("unsupported dataset version " + std::to_string(index.version));
    index.seed = j.at("seed").get<std::uint64_t>();
    index.height = j.at("height").get<int>();
    index.width = j.at("width").get<int>();
    index.video_frames = j.at("video_frames").get<int>();
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.id = s.at("id").get<std::string>();
      e.kind = kind_from_name(s.at("kind").get<std::string>());
      e.seed = s.at("seed").get<std::uint64_t>();
      e.frames = s.at("frames").get<int>();
      e.declared_time = s.at("declared_time").get<int>();
      e.prompt = s.at("prompt").get<std::string>();
      index.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset index: " + std::string(e.what()));
  }
  return index;
}

StoredSample read_sample(const fs::path& root, const SampleEntry& entry) {
  const fs::path dir = root / "samples" / entry.id;
  StoredSample s;
  s.entry = entry;
  std::vector<PngImage> frames;
  char name[32];
  for (int t = 0; t < entry.frames; ++t) {
    std::snprintf(name, sizeof(name), "%05d.png", t);
    frames.push_back(read_png(dir / "frames" / name));
    s.sketches.push_back(sketch_from_png(read_png(dir / ("sketch_" + std::to_string(t) + ".png"))));
  }
  s.clip = clip_from_pngs(frames);
  std::ifstream f(dir / "scene.json");
  if (!f) throw DataError("missing scene metadata for " + entry.id);
  try {
    s.scene = nlohmann::json::parse(f).get<SceneSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt scene metadata for " + entry.id + ": " + e.what());
  }
  return s;
}

DatasetLoader::DatasetLoader(fs::path root, SampleKind kind, std::uint64_t seed, double holdout_fraction,
                             bool holdout_split)
    : root_(std::move(root)), index_(read_dataset_index(root_)), rng_(seed) {
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < index_.samples.size(); ++i) {
    if (index_.samples[i].kind == kind) all.push_back(i);
  }
  const auto held = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(all.size())));
  const std::size_t split = all.size() - held;
  if (holdout_split) {
    members_.assign(all.begin() + static_cast<std::ptrdiff_t>(split), all.end());
  } else {
    members_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(split));
  }
  if (members_.empty()) throw DataError("dataset has no " + kind_name(kind) + " samples in the requested split");
  reshuffle();
}

void DatasetLoader::reshuffle() {
  order_ = members_;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

StoredSample DatasetLoader::next() {
  if (cursor_ == order_.size()) reshuffle();
  return read_sample(root_, index_.samples[order_[cursor_++]]);
}

StoredSample DatasetLoader::at(std::size_t position) const {
  if (position >= members_.size()) throw RangeError("loader position out of range");
  return read_sample(root_, index_.samples[members_[position]]);
}

}  // namespace sketchdit
