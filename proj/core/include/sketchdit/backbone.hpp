#pragma once

#include "sketchdit/nn.hpp"
#include "sketchdit/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sketchdit {

struct BackboneConfig {
  int blocks = 10;
  int width = 64;
  int heads = 4;
  int ff_mult = 4;
  int max_text_tokens = 16;
  // Latent grid of a full training clip (17 x 32 x 32 pixels for the toy preset).
  int latent_frames = 5;
  int grid_h = 4;
  int grid_w = 4;
  // Test-only switch: drop the fixed 3D positional embedding.
  bool positional_embedding = true;
  // Data scale assumed by the output skip (see velocity_preconditioning); 1 is a plain v head.
  double sigma_data = 0.2;

  static BackboneConfig toy();
  // 30-block, 1920-wide preset over 49 x 480 x 720 video. Used for cost accounting only.
  static BackboneConfig paper_scale();

  void validate() const;
  [[nodiscard]] int video_tokens() const { return latent_frames * grid_h * grid_w; }
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Word-level tokenizer over the synthetic prompt grammar. Unknown words map to kUnk.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;
  static const std::vector<std::string>& vocabulary();
  [[nodiscard]] static int vocab_size() { return static_cast<int>(vocabulary().size()); }
  [[nodiscard]] static std::vector<int> encode(std::string_view prompt);
  [[nodiscard]] static std::string decode(const std::vector<int>& ids);
};

/// Per-frame temporal coordinates of the latent tokens handed to the backbone.
/// Video clips use 0..T'-1; an image declared at time t uses {latent_frame_of(t)}.
struct LatentLayout {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> time_positions;

  [[nodiscard]] int frames() const { return static_cast<int>(time_positions.size()); }
  [[nodiscard]] int tokens() const { return frames() * grid_h * grid_w; }
  [[nodiscard]] int tokens_per_frame() const { return grid_h * grid_w; }
  static LatentLayout video(int frames, int grid_h, int grid_w);
};

struct Backbone {
  BackboneConfig config;
  Parameter text_embed;  // [vocab, width]
  Linear patch_embed;    // 768 -> width
  Linear time_in, time_out;
  std::vector<DiTBlock> blocks;
  Linear final_modulation;  // cond -> [shift, scale]
  Linear head;              // width -> 768, zero-initialised
  Parameter data_mean;      // [1, 768] centre of the output skip

  static Backbone create(const BackboneConfig& config, std::uint64_t seed);

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  void set_trainable(bool trainable);
  [[nodiscard]] std::size_t parameter_count() const;
};

/// Fixed sinusoidal embedding of (t, y, x); width split 1/4 time, 3/8 rows, 3/8 columns.
[[nodiscard]] RowVec positional_embedding_3d(int width, int t, int y, int x);
[[nodiscard]] Mat video_positions(const LatentLayout& layout, int width);
[[nodiscard]] Mat text_positions(int count, int width);
[[nodiscard]] RowVec timestep_sinusoid(int timestep, int width);

/// Embedding lookup plus positions. An empty prompt yields a 0-row segment.
Var text_encode(Tape& t, const Backbone& bb, const std::vector<int>& tokens);

/// Linear patch projection of latent cells plus the 3D position of each cell.
Var patchify(Tape& t, const Backbone& bb, const Mat& latent_tokens, const LatentLayout& layout);

/// Text segment followed by the video segment.
Var patchify(Tape& t, const Backbone& bb, const Mat& latent_tokens, const LatentLayout& layout, Var text);

/// silu(MLP(sinusoid(t))), shared by all adaptive norms.
Var timestep_condition(Tape& t, const Backbone& bb, int timestep);

/// Final adaptive norm and zero-initialised projection back to latent channels.
Var unpatchify(Tape& t, const Backbone& bb, Var video_tokens, Var cond);

struct DenoiseInput {
  const Mat* noisy = nullptr;  // [layout.tokens(), 768]
  int timestep = 0;
  std::vector<int> prompt;
  LatentLayout layout;
};

/// Called with the video-token slice h_i entering block i. A returned value is
/// added to that slice before the block runs.
using BlockHook = std::function<std::optional<Var>(int block, Var hidden_video, Var cond)>;

using ResidualMap = std::map<int, Var>;

/// v-prediction over the noisy latent. Runs patchify, the block stack and the head.
Var denoise(Tape& t, const Backbone& bb, const DenoiseInput& in, const BlockHook& hook = {});

/// Convenience form with precomputed residuals keyed by block index.
Var denoise(Tape& t, const Backbone& bb, const DenoiseInput& in, const ResidualMap& residuals);

}  // namespace sketchdit
