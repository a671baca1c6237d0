#pragma once

#include "sketchdit/model.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace sketchdit {

struct GenerateRequest {
  std::string prompt;
  std::optional<KeyframeSketchSet> sketches;
  int frames = 17;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  SamplerConfig sampler;  // 50 steps, guidance 10
};

/// Samples a clip: z_T from the seed, guided DDIM, decode, clamp to [0,1].
[[nodiscard]] VideoClip generate_video(const SketchVideoModel& model, const GenerateRequest& request);

/// Conditioning for a clip of `frames` x `height` x `width`.
[[nodiscard]] Conditioning make_conditioning(const std::string& prompt, const std::optional<KeyframeSketchSet>& sketches,
                                             int frames, int height, int width);

[[nodiscard]] VideoClip decode_model_latent(const Mat& z, int frames, int height, int width);

struct EditRequest {
  VideoClip source;
  std::string prompt;
  std::optional<KeyframeSketchSet> sketches;
  MaskTrack track;
  SamplerConfig sampler{50, 20.0};
  FusionPolicy fusion;
  bool latent_fusion = true;
  InversionConfig inversion;
};

struct EditResult {
  VideoClip video;
  InversionTrajectory inversion;
};

/// Inverts the source at guidance 1, then samples with the editing network
/// from the inverted noise, fusing unedited cells at the policy's steps.
[[nodiscard]] EditResult edit_video(const SketchVideoModel& model, const EditRequest& request);

/// Decode-time blend (ablation baseline only): unedited pixels copied from the source.
[[nodiscard]] VideoClip pixel_blend(const VideoClip& source, const VideoClip& edited, const MaskTrack& track);

}  // namespace sketchdit
