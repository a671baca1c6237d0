#pragma once

#include "sketchdit/autograd.hpp"

#include <cstdint>
#include <vector>

namespace sketchdit {

/// Pixel video, frames x height x width x RGB, values in [0, 1].
struct VideoClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  VideoClip() = default;
  VideoClip(int t, int h, int w, double fill = 0.0)
      : frames(t), height(h), width(w), pixels(static_cast<std::size_t>(t) * h * w * 3, fill) {}

  [[nodiscard]] std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + c;
  }
  double& at(int t, int y, int x, int c) { return pixels[index(t, y, x, c)]; }
  [[nodiscard]] double at(int t, int y, int x, int c) const { return pixels[index(t, y, x, c)]; }

  [[nodiscard]] VideoClip frame(int t) const;
  bool operator==(const VideoClip&) const = default;
};

/// A single-channel binary image (sketches, per-frame masks).
struct BinaryMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMap() = default;
  BinaryMap(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::size_t count() const;
  bool operator==(const BinaryMap&) const = default;
};

/// Codec output. One row per latent cell, ordered (t, y, x) with x fastest.
struct LatentVideo {
  int frames = 0;
  int grid_h = 0;
  int grid_w = 0;
  Mat values;  // [frames * grid_h * grid_w, channels]

  [[nodiscard]] int tokens() const { return frames * grid_h * grid_w; }
  [[nodiscard]] int token_index(int t, int y, int x) const { return (t * grid_h + y) * grid_w + x; }
};

/// Binary latent-cell mask with the codec's (t, y, x) cell order.
struct LatentMask {
  int frames = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t& at(int t, int y, int x) { return cells[(static_cast<std::size_t>(t) * grid_h + y) * grid_w + x]; }
  [[nodiscard]] std::uint8_t at(int t, int y, int x) const {
    return cells[(static_cast<std::size_t>(t) * grid_h + y) * grid_w + x];
  }
  // 1.0 for edited cells, 0.0 otherwise; one weight per latent token.
  [[nodiscard]] ColVec as_weights() const;
  [[nodiscard]] ColVec inverted_weights() const;
  bool operator==(const LatentMask&) const = default;
};

/// Per-frame pixel masks plus the derived latent masks. 1 marks edited pixels.
struct MaskTrack {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // [frames, height, width]
  LatentMask latent;

  std::uint8_t& at(int t, int y, int x) {
    return pixels[(static_cast<std::size_t>(t) * height + y) * width + x];
  }
  [[nodiscard]] std::uint8_t at(int t, int y, int x) const {
    return pixels[(static_cast<std::size_t>(t) * height + y) * width + x];
  }
};

}  // namespace sketchdit
