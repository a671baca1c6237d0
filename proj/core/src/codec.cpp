#include "sketchdit/codec.hpp"

#include "sketchdit/errors.hpp"

#include <string>

namespace sketchdit::codec {

void validate_clip_shape(int frames, int height, int width) {
  if (frames < 1 || (frames - 1) % kTemporal != 0) {
    throw ShapeError("frame count must be 4k+1, got " + std::to_string(frames));
  }
  if (height <= 0 || width <= 0 || height % kSpatial != 0 || width % kSpatial != 0) {
    throw ShapeError("height and width must be positive multiples of 8, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
}

namespace {

// Pixel frame stored in slot f of latent frame g.
int source_frame(int g, int f) { return g == 0 ? 0 : 4 * g - 3 + f; }

}  // namespace

LatentVideo encode_video(const VideoClip& clip) {
  validate_clip_shape(clip.frames, clip.height, clip.width);
  if (clip.pixels.size() != static_cast<std::size_t>(clip.frames) * clip.height * clip.width * 3) {
    throw ShapeError("pixel buffer size does not match clip dimensions");
  }
  LatentVideo out;
  out.frames = latent_frames(clip.frames);
  out.grid_h = clip.height / kSpatial;
  out.grid_w = clip.width / kSpatial;
  out.values.resize(out.tokens(), kChannels);
  for (int g = 0; g < out.frames; ++g) {
    for (int gy = 0; gy < out.grid_h; ++gy) {
      for (int gx = 0; gx < out.grid_w; ++gx) {
        auto row = out.values.row(out.token_index(g, gy, gx));
        for (int f = 0; f < kTemporal; ++f) {
          const int t = source_frame(g, f);
          for (int py = 0; py < kSpatial; ++py) {
            for (int px = 0; px < kSpatial; ++px) {
              for (int c = 0; c < 3; ++c) {
                row(channel_of(f, py, px, c)) = clip.at(t, gy * kSpatial + py, gx * kSpatial + px, c);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

VideoClip decode_video(const LatentVideo& latent) {
  if (latent.frames < 1 || latent.grid_h < 1 || latent.grid_w < 1 || latent.values.rows() != latent.tokens() ||
      latent.values.cols() != kChannels) {
    throw ShapeError("malformed latent video");
  }
  VideoClip clip(1 + (latent.frames - 1) * kTemporal, latent.grid_h * kSpatial, latent.grid_w * kSpatial);
  for (int g = 0; g < latent.frames; ++g) {
    for (int gy = 0; gy < latent.grid_h; ++gy) {
      for (int gx = 0; gx < latent.grid_w; ++gx) {
        const auto row = latent.values.row(latent.token_index(g, gy, gx));
        const int slots = g == 0 ? 1 : kTemporal;
        for (int f = 0; f < slots; ++f) {
          const int t = source_frame(g, f);
          for (int py = 0; py < kSpatial; ++py) {
            for (int px = 0; px < kSpatial; ++px) {
              for (int c = 0; c < 3; ++c) {
                clip.at(t, gy * kSpatial + py, gx * kSpatial + px, c) = row(channel_of(f, py, px, c));
              }
            }
          }
        }
      }
    }
  }
  return clip;
}

LatentMask encode_mask(int frames, int height, int width, const std::vector<std::uint8_t>& pixel_masks) {
  validate_clip_shape(frames, height, width);
  if (pixel_masks.size() != static_cast<std::size_t>(frames) * height * width) {
    throw ShapeError("mask buffer size does not match track dimensions");
  }
  LatentMask out;
  out.frames = latent_frames(frames);
  out.grid_h = height / kSpatial;
  out.grid_w = width / kSpatial;
  out.cells.assign(static_cast<std::size_t>(out.frames) * out.grid_h * out.grid_w, 0);
  for (int t = 0; t < frames; ++t) {
    const int g = latent_frame_of(t);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (pixel_masks[(static_cast<std::size_t>(t) * height + y) * width + x] != 0) {
          out.at(g, y / kSpatial, x / kSpatial) = 1;
        }
      }
    }
  }
  return out;
}

void encode_mask(MaskTrack& track) { track.latent = encode_mask(track.frames, track.height, track.width, track.pixels); }

Mat encode_frame(const VideoClip& single_frame) {
  if (single_frame.frames != 1) throw ShapeError("encode_frame expects a single frame");
  return encode_video(single_frame).values;
}

Mat encode_sketch(const BinaryMap& sketch) {
  VideoClip frame(1, sketch.height, sketch.width);
  for (int y = 0; y < sketch.height; ++y) {
    for (int x = 0; x < sketch.width; ++x) {
      const double v = sketch.at(y, x) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) frame.at(0, y, x, c) = v;
    }
  }
  return encode_frame(frame);
}

}  // namespace sketchdit::codec
