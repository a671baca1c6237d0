#pragma once

#include "sketchdit/control.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>

namespace sketchdit {

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const Rect&) const = default;
};

enum class Movement { Fixed, Linear, Flow };

[[nodiscard]] std::string to_string(Movement m);
[[nodiscard]] Movement movement_from_string(const std::string& s);

/// Rectangle mask description; JSON form
/// {rect:[x,y,w,h], movement:"fixed"|"linear"|"flow", endpoint:[x,y,w,h]?, frames:[a,b]}.
struct MaskSpec {
  Rect rect;
  Movement movement = Movement::Fixed;
  std::optional<Rect> endpoint;  // required for linear movement
  int first_frame = 0;
  int last_frame = 0;  // inclusive
};

/// Throws DataError with a readable message on any schema violation.
[[nodiscard]] MaskSpec mask_spec_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json mask_spec_to_json(const MaskSpec& spec);

/// Mean motion (pixels per frame) of the content under `rect` at `frame`.
using VelocityProvider = std::function<std::array<double, 2>(int frame, const Rect& rect)>;

/// Per-frame rectangle masks for a clip of `frames` x `height` x `width`, with latent masks filled in.
[[nodiscard]] MaskTrack mask_rectangle_track(const MaskSpec& spec, int frames, int height, int width,
                                             const VelocityProvider& velocity = {});

/// Rectangle actually drawn at frame t (already clipped); empty when inactive.
[[nodiscard]] std::optional<Rect> track_rect_at(const MaskSpec& spec, int t, int height, int width,
                                                const VelocityProvider& velocity = {});

struct MaskedVideoLatent {
  LatentVideo latent;  // encode(clip * (1 - pixel mask))
  LatentMask mask;     // M; the inverted mask is 1 - M
};

[[nodiscard]] MaskedVideoLatent mask_video(const VideoClip& clip, const MaskTrack& track);

/// Video insertion module: trainable copies of the controlled backbone blocks
/// running over the masked source video.
struct VideoInsertionBranch {
  Linear video_embed;  // 768 -> width, starts from the backbone patch projection
  std::vector<DiTBlock> blocks;

  static VideoInsertionBranch create(const Backbone& backbone, const ControlConfig& control);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  void set_trainable(bool trainable);
  [[nodiscard]] std::size_t parameter_count() const;
};

/// Widens every residual head input to 2*width for the mask-weighted concat.
/// Existing rows keep serving the sketch half; video-half rows start at zero,
/// or random when `random_video_half` (fresh editing networks).
void widen_for_editing(ControlBranch& cb, std::uint64_t seed, bool random_video_half);

struct EditInputs {
  Mat masked_latent;  // model-space tokens of the masked source video
  ColVec mask;        // M per video token (1 = edited)
};

struct VideoInsertionOutput {
  Var next;      // v_i, input of the next insertion block
  Var features;  // v~_i, consumed by the fusion
};

VideoInsertionOutput video_insertion_forward(Tape& t, const DiTBlock& block, Var video_prev, Var cond, int heads);

/// Concat(c~ * M, v~ * (1 - M)) along channels.
Var fuse_branches(Tape& t, Var propagated, Var video, const ColVec& mask);

/// Generation control plus the insertion branch fused into every control block.
/// `sketches` may be null (unconditional guidance branch); the video branch still runs.
Var run_edit_branch(Tape& t, const Backbone& bb, const ControlBranch& cb, const VideoInsertionBranch& vib,
                    const DenoiseInput& in, const SketchCondition* sketches, const EditInputs& edit,
                    ResidualMap* residuals_out = nullptr, ControlTrace* trace = nullptr);

}  // namespace sketchdit
