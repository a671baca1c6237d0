#pragma once

#include "sketchdit/pipeline.hpp"
#include "sketchdit/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sketchdit {

// ---------------------------------------------------------------------------
// Metrics (desk-scale substitutes: edge overlap for sketch fidelity, a fixed
// random projection for temporal consistency)

/// Seed of the published projection used by temporal_consistency.
inline constexpr std::uint64_t kConsistencyProjectionSeed = 0x7c0115e5;
inline constexpr int kConsistencyGrid = 8;
inline constexpr int kConsistencyDims = 64;
inline constexpr double kPsnrCap = 99.0;

/// F1 of two edge maps where a pixel matches anything within `tolerance`
/// pixels (Chebyshev) on the other map. Two empty maps score 1.
[[nodiscard]] double edge_f1(const BinaryMap& reference, const BinaryMap& predicted, int tolerance = 2);

/// edge_f1(sketch, extract_sketch(clip, frame)).
[[nodiscard]] double edge_fidelity(const BinaryMap& sketch, const VideoClip& clip, int frame);

/// Projected per-frame feature of temporal_consistency (block means, centred, 64-d).
[[nodiscard]] Eigen::VectorXd consistency_feature(const VideoClip& clip, int frame);

/// Mean cosine between projected features of adjacent frames.
[[nodiscard]] double temporal_consistency(const VideoClip& clip);

/// PSNR (peak 1) over pixels outside the edit mask, all frames, capped at 99 dB.
[[nodiscard]] double psnr_unedited(const VideoClip& original, const VideoClip& edited, const MaskTrack& track);

// ---------------------------------------------------------------------------
// Parameter and FLOP accounting

struct CostRow {
  std::string name;
  std::size_t parameters = 0;          // whole network
  std::size_t branch_parameters = 0;   // parameters beyond the base backbone
  double flops = 0;                    // one forward pass
  double branch_flops = 0;
};

struct CostTable {
  BackboneConfig backbone;
  int keyframes = 2;
  std::vector<CostRow> rows;  // base, ctrl-5, ours, ctrl-10, edit
  double copy_ratio = 0;      // copy-block parameters of ours / backbone block parameters

  [[nodiscard]] const CostRow& row(const std::string& name) const;
  [[nodiscard]] std::string markdown() const;
  [[nodiscard]] std::string csv() const;
};

/// Closed-form counts for the given backbone. ControlNet-style variants copy
/// the first N blocks over the full token sequence and add one zero linear
/// per copy; ours uses `control` over `keyframes` sketch frames.
[[nodiscard]] CostTable cost_table(const BackboneConfig& backbone, const ControlConfig& control = {},
                                   int keyframes = 2);

// ---------------------------------------------------------------------------
// Generation evaluation

struct EvalOptions {
  int samples = 16;      // held-out clips
  int steps = 50;
  double cfg = 10.0;
  int keyframes = 2;
  std::uint64_t seed = 0;  // keyframe choice and sampling noise
  double holdout_fraction = 0.1;
};

struct SampleMetrics {
  std::string id;
  std::vector<int> keyframes;
  double edge_f1 = 0;           // conditioned keyframes, sketch-conditioned sample
  double edge_f1_baseline = 0;  // same prompt and noise, no sketches
  double temporal_consistency = 0;
};

struct GenerationReport {
  std::vector<SampleMetrics> samples;
  double edge_f1 = 0;  // means over samples
  double edge_f1_baseline = 0;
  double temporal_consistency = 0;
  double corpus_temporal_consistency = 0;  // same held-out clips

  [[nodiscard]] nlohmann::json json() const;
};

[[nodiscard]] GenerationReport evaluate_generation(const SketchVideoModel& model, const std::filesystem::path& dataset,
                                                   const EvalOptions& options);

struct EditEvalOptions {
  int samples = 8;
  int steps = 50;
  double cfg = 20.0;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
  bool latent_fusion = true;
  FusionPolicy fusion;
};

struct EditSampleMetrics {
  std::string id;
  double psnr_unedited = 0;
  double edge_f1 = 0;  // conditioned keyframes
};

struct EditReport {
  std::vector<EditSampleMetrics> samples;
  double psnr_unedited = 0;
  double edge_f1 = 0;

  [[nodiscard]] nlohmann::json json() const;
};

/// Held-out clips with a sampled mask and sketches redrawn from the clip itself.
[[nodiscard]] EditReport evaluate_editing(const SketchVideoModel& model, const std::filesystem::path& dataset,
                                          const EditEvalOptions& options);

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationVariant {
  std::string name;
  ControlConfig control;
  bool use_image_stage = true;
};

/// Named variants: ours, temporal-concat, sketch-kv, no-skip (first five),
/// no-image, place-0-4, place-3-7, place-5-9 (plus any "place-a-b").
[[nodiscard]] AblationVariant ablation_variant(const std::string& name);

struct AblationOptions {
  std::filesystem::path dataset;
  std::filesystem::path backbone;  // pretrained backbone checkpoint
  std::filesystem::path workdir;   // per-run checkpoints, reused when present
  std::vector<AblationVariant> variants;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainConfig train;  // budget and optimiser; task, init, output and control are set per run
  EvalOptions eval;
};

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::string fingerprint;  // hash of model spec and training budget
  GenerationReport report;
};

struct AblationSummary {
  std::string variant;
  double edge_f1 = 0;  // median over seeds of the per-run means
  double edge_f1_baseline = 0;
  double temporal_consistency = 0;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> summary;

  [[nodiscard]] std::string csv() const;       // one row per run
  [[nodiscard]] std::string markdown() const;  // summary table then runs
  [[nodiscard]] nlohmann::json json() const;
};

[[nodiscard]] double median(std::vector<double> values);
[[nodiscard]] AblationReport summarize(std::vector<AblationRun> runs, const std::vector<AblationVariant>& variants);

using AblationProgress = std::function<void(const std::string& message)>;

[[nodiscard]] AblationReport run_ablation(const AblationOptions& options, const AblationProgress& progress = {});

/// Fingerprint of a training run: model spec plus every budget field.
[[nodiscard]] std::string training_fingerprint(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Attention visualisation

/// Writes one grayscale PNG per head and key frame ("<stem>_h<head>_k<key>.png",
/// query cells by key cells, scaled to peak 1) plus the raw weights in "<stem>.json".
/// Returns the written paths, JSON last.
std::vector<std::filesystem::path> write_attention_dump(const std::filesystem::path& dir, const std::string& stem,
                                                        const AttentionDump& dump);

[[nodiscard]] nlohmann::json attention_dump_json(const AttentionDump& dump);

/// Inter-frame attention over a finished clip: its latent noised to `timestep`
/// with noise drawn from `seed`, conditioned on the prompt and sketches.
/// `frame` is a pixel frame; the dump covers the latent frame holding it.
[[nodiscard]] AttentionDump clip_attention(const SketchVideoModel& model, const VideoClip& clip, const std::string& prompt,
                                           const KeyframeSketchSet& sketches, int block, int frame, int timestep,
                                           std::uint64_t seed);

/// Head-averaged weights, query cells by key cells of every key frame, scaled to peak 1.
[[nodiscard]] Mat attention_image(const AttentionDump& dump);

}  // namespace sketchdit
