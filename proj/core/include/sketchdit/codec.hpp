#pragma once

#include "sketchdit/types.hpp"

namespace sketchdit::codec {

inline constexpr int kSpatial = 8;
inline constexpr int kTemporal = 4;
inline constexpr int kChannels = 3 * kSpatial * kSpatial * kTemporal;  // 768

[[nodiscard]] constexpr int latent_frames(int frames) { return 1 + (frames - 1) / kTemporal; }

/// Latent frame holding pixel frame t: frame 0 alone, then groups of four.
[[nodiscard]] constexpr int latent_frame_of(int t) { return t == 0 ? 0 : (t + kTemporal - 1) / kTemporal; }

/// Channel slot of (frame-in-group f, row py, col px, colour c) inside a latent cell.
[[nodiscard]] constexpr int channel_of(int f, int py, int px, int c) {
  return ((f * kSpatial + py) * kSpatial + px) * 3 + c;
}

void validate_clip_shape(int frames, int height, int width);

/// Space-to-depth over 8x8 cells and stacking over four-frame groups. Frame 0
/// is replicated into all four slots of the leading causal group.
[[nodiscard]] LatentVideo encode_video(const VideoClip& clip);

/// Exact inverse of encode_video; frame 0 is read from slot 0.
[[nodiscard]] VideoClip decode_video(const LatentVideo& latent);

/// OR-reduction of pixel masks over each 8x8 cell and four-frame group.
[[nodiscard]] LatentMask encode_mask(int frames, int height, int width, const std::vector<std::uint8_t>& pixel_masks);
void encode_mask(MaskTrack& track);

/// Encodes one RGB frame as a single-frame causal group: [h*w, 768].
[[nodiscard]] Mat encode_frame(const VideoClip& single_frame);

/// Tiles a binary sketch to three channels and encodes it as one frame.
[[nodiscard]] Mat encode_sketch(const BinaryMap& sketch);

}  // namespace sketchdit::codec
