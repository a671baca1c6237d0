#pragma once

#include "sketchdit/control.hpp"
#include "sketchdit/diffusion.hpp"
#include "sketchdit/editing.hpp"

#include <optional>

namespace sketchdit {

/// Everything a checkpoint holds: frozen backbone, optional sketch branch,
/// optional video insertion branch, and the noise schedule.
struct SketchVideoModel {
  Backbone backbone;
  std::optional<ControlBranch> control;
  std::optional<VideoInsertionBranch> insertion;
  NoiseSchedule schedule = make_schedule();

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  [[nodiscard]] std::vector<Parameter*> trainable_parameters();
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool is_editing() const { return insertion.has_value(); }
};

/// Per-request conditioning. `edit` is required exactly when the model has an insertion branch.
struct Conditioning {
  LatentLayout layout;
  std::vector<int> prompt;
  std::optional<SketchCondition> sketches;
  std::optional<EditInputs> edit;

  /// Guidance branch: empty prompt and no sketches; edit inputs are kept.
  [[nodiscard]] Conditioning unconditional() const;
};

/// Differentiable v prediction for model-space latent tokens z at timestep t.
Var forward_velocity(Tape& t, const SketchVideoModel& model, const Mat& z, int timestep, const Conditioning& cond,
                     ControlTrace* trace = nullptr);

/// Inference-only prediction.
[[nodiscard]] Mat predict_velocity(const SketchVideoModel& model, const Mat& z, int timestep, const Conditioning& cond);

/// Sampler adaptor over a fixed conditioning.
[[nodiscard]] VelocityFn velocity_fn(const SketchVideoModel& model, const Conditioning& cond);

}  // namespace sketchdit
