#pragma once

#include "sketchdit/backbone.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sketchdit {

/// How keyframe control features reach the other frames.
enum class Propagation {
  InterFrame,      // Q from all frames, K from keyframe hidden states, V from sketch features
  TemporalConcat,  // sketch tokens appended to the frame tokens, joint self-attention
  SketchKeyValue,  // plain cross-attention: K and V both from sketch features
};

[[nodiscard]] std::string to_string(Propagation p);
[[nodiscard]] Propagation propagation_from_string(const std::string& s);

struct ControlConfig {
  std::vector<int> placement{0, 2, 4, 6, 8};
  Propagation propagation = Propagation::InterFrame;
  // Reuse the paired backbone block's frozen Q/K projections for inter-frame attention.
  bool share_qk_with_backbone = false;
  // Learned per-position code added to the propagation queries and keys.
  bool position_code = true;
  int out_hidden_mult = 2;

  void validate(int backbone_blocks) const;
  // `count` blocks spread evenly: {0,2,4,6,8} of 10, {0,6,12,18,24} of 30.
  [[nodiscard]] static std::vector<int> uniform_placement(int backbone_blocks, int count);
  [[nodiscard]] static std::vector<int> consecutive_placement(int first, int count);
};

void to_json(nlohmann::json& j, const ControlConfig& c);
void from_json(const nlohmann::json& j, ControlConfig& c);

/// One or two keyframe sketches with pixel-frame time points t1 < t2.
struct KeyframeSketchSet {
  std::vector<BinaryMap> sketches;
  std::vector<int> time_points;
};

/// Sketches resolved against the clip they condition.
struct SketchCondition {
  Mat latents;                  // [K * h * w, 768]
  std::vector<int> positions;   // temporal position used by the sketch embedding
  std::vector<int> key_frames;  // latent frame of the conditioned clip holding each keyframe

  [[nodiscard]] int count() const { return static_cast<int>(key_frames.size()); }
};

/// Validates time points and encodes each sketch as a single-frame group.
/// `declared_time` places a single-frame (image) clip at an arbitrary video time.
[[nodiscard]] SketchCondition resolve_sketches(const KeyframeSketchSet& set, int clip_frames, int height, int width,
                                               std::optional<int> declared_time = std::nullopt);

struct SketchControlBlock {
  int backbone_block = 0;
  Linear sketch_up, sketch_down;  // feed-forward carrying s_{j-1} -> s_j
  DiTBlock copy;                  // trainable copy of the paired backbone block
  Linear w_q, w_k, w_v;           // propagation projections
  Parameter pos_code;             // [h * w, width]; empty when the config disables it
  Linear out_up, out_down;        // residual head; out_down starts at zero

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

struct ControlBranch {
  ControlConfig config;
  int heads = 1;
  Linear sketch_embed;  // 768 -> width
  std::vector<SketchControlBlock> blocks;

  static ControlBranch create(const Backbone& backbone, const ControlConfig& config, std::uint64_t seed);

  [[nodiscard]] int index_of_block(int backbone_block) const;  // -1 when not controlled
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  void set_trainable(bool trainable);
  [[nodiscard]] std::size_t parameter_count() const;
};

/// Sketch latents s0: patch projection plus the time-aware position of each keyframe.
Var encode_sketch_condition(Tape& t, const Backbone& bb, const ControlBranch& cb, const SketchCondition& cond);

/// DiT-block computation over the sketch tokens only.
Var sketch_dit_copy(Tape& t, const SketchControlBlock& block, Var sketch_tokens, Var cond, int heads);

/// Propagates keyframe control features to every frame. Keys and values only
/// ever read the keyframe rows. Output has one row per video token.
Var inter_frame_attention(Tape& t, const SketchControlBlock& block, const DiTBlock* backbone_block,
                          Propagation mode, Var hidden_all, const std::vector<int>& key_frames,
                          int tokens_per_frame, Var control_key, int heads, ops::AttentionProbs* capture = nullptr);

/// Orthonormal per-head code scaled so a matching query/key pair adds `logit` to the attention score.
[[nodiscard]] Mat initial_position_code(int positions, int width, int heads, double logit, Rng& rng);

struct ControlBlockOutput {
  Var sketch_state;  // s_j
  Var propagated;    // c~ over all frames
  Var residual;      // h-bar; unset when the caller fuses propagated features itself
};

/// One sketch control block. `with_head` selects the generation residual head.
ControlBlockOutput sketch_control_block(Tape& t, const Backbone& bb, const ControlBranch& cb, int index,
                                        Var sketch_prev, Var hidden_video, Var cond,
                                        const SketchCondition& cond_info, int tokens_per_frame, bool with_head = true,
                                        ops::AttentionProbs* capture = nullptr);

struct ControlTrace {
  // Attention weights of each control block, keyed by control index.
  std::vector<ops::AttentionProbs> attention;
};

/// Turns the propagated features of control block j (absent when no sketches
/// are given) into the residual added to its backbone block.
using ResidualFn = std::function<Var(Tape& t, int index, std::optional<Var> propagated, Var cond)>;

/// Combined forward: backbone blocks interleaved with control blocks, each
/// control block reading h_i of the same pass. Returns the v prediction.
Var run_control_branch(Tape& t, const Backbone& bb, const ControlBranch& cb, const DenoiseInput& in,
                       const SketchCondition* sketches, ResidualMap* residuals_out = nullptr,
                       ControlTrace* trace = nullptr, const ResidualFn& residual_fn = {});

struct AttentionDump {
  int block = 0;        // backbone block index
  int frame = 0;        // query latent frame
  std::vector<int> key_frames;
  int grid_h = 0, grid_w = 0;
  std::vector<Mat> heads;  // [h*w query cells, K*h*w key cells] per head
};

/// Inter-frame attention weights of one controlled block for one query frame.
AttentionDump dump_attention_maps(const Backbone& bb, const ControlBranch& cb, const DenoiseInput& in,
                                  const SketchCondition& sketches, int block, int frame);

}  // namespace sketchdit
