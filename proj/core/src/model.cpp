#include "sketchdit/model.hpp"

#include "sketchdit/errors.hpp"

namespace sketchdit {

void SketchVideoModel::collect(std::vector<Parameter*>& out) {
  backbone.collect(out);
  if (control) control->collect(out);
  if (insertion) insertion->collect(out);
}

void SketchVideoModel::collect(std::vector<const Parameter*>& out) const {
  backbone.collect(out);
  if (control) control->collect(out);
  if (insertion) insertion->collect(out);
}

std::vector<Parameter*> SketchVideoModel::trainable_parameters() {
  std::vector<Parameter*> all;
  collect(all);
  std::vector<Parameter*> out;
  for (Parameter* p : all) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::size_t SketchVideoModel::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  return count_parameters(ps);
}

Conditioning Conditioning::unconditional() const {
  Conditioning c;
  c.layout = layout;
  c.edit = edit;
  return c;
}

namespace {

Var network_output(Tape& t, const SketchVideoModel& model, const Mat& z, int timestep, const Conditioning& cond,
                   ControlTrace* trace) {
  model.schedule.check_timestep(timestep);
  DenoiseInput in;
  in.noisy = &z;
  in.timestep = timestep;
  in.prompt = cond.prompt;
  in.layout = cond.layout;
  const SketchCondition* sketches = cond.sketches ? &*cond.sketches : nullptr;
  if (model.insertion) {
    if (!model.control) throw ShapeError("an insertion branch needs a sketch branch");
    if (!cond.edit) throw ShapeError("editing model needs masked-video inputs");
    return run_edit_branch(t, model.backbone, *model.control, *model.insertion, in, sketches, *cond.edit, nullptr,
                           trace);
  }
  if (model.control) return run_control_branch(t, model.backbone, *model.control, in, sketches, nullptr, trace);
  return denoise(t, model.backbone, in, BlockHook{});
}

}  // namespace

Var forward_velocity(Tape& t, const SketchVideoModel& model, const Mat& z, int timestep, const Conditioning& cond,
                     ControlTrace* trace) {
  const Var f = network_output(t, model, z, timestep, cond, trace);
  const VelocityPreconditioning pc = velocity_preconditioning(model.schedule, timestep, model.backbone.config.sigma_data);
  const Var skip = ops::add(t, ops::scale(t, f, pc.out_coeff), t.constant(pc.z_coeff * z));
  return ops::add_row(t, skip, ops::scale(t, t.param(model.backbone.data_mean), -pc.mean_coeff));
}

Mat predict_velocity(const SketchVideoModel& model, const Mat& z, int timestep, const Conditioning& cond) {
  Tape t(false);
  return t.value(forward_velocity(t, model, z, timestep, cond));
}

VelocityFn velocity_fn(const SketchVideoModel& model, const Conditioning& cond) {
  return [&model, cond, uncond = cond.unconditional()](const Mat& z, int t, bool conditional) {
    return predict_velocity(model, z, t, conditional ? cond : uncond);
  };
}

}  // namespace sketchdit
