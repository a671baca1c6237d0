#include "sketchdit/editing.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace sketchdit {

std::string to_string(Movement m) {
  switch (m) {
    case Movement::Fixed: return "fixed";
    case Movement::Linear: return "linear";
    case Movement::Flow: return "flow";
  }
  return "fixed";
}

Movement movement_from_string(const std::string& s) {
  if (s == "fixed") return Movement::Fixed;
  if (s == "linear") return Movement::Linear;
  if (s == "flow") return Movement::Flow;
  throw DataError("unknown mask movement '" + s + "'");
}

namespace {

Rect rect_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.size() != 4) throw DataError(std::string(field) + " must be [x,y,w,h]");
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw DataError(std::string(field) + " entries must be integers");
  }
  Rect r{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (r.w <= 0 || r.h <= 0) throw DataError(std::string(field) + " has zero area");
  return r;
}

Rect clip_rect(Rect r, int height, int width) {
  const int x0 = std::clamp(r.x, 0, width);
  const int y0 = std::clamp(r.y, 0, height);
  const int x1 = std::clamp(r.x + r.w, 0, width);
  const int y1 = std::clamp(r.y + r.h, 0, height);
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

int lerp_round(int a, int b, double u) { return static_cast<int>(std::lround(a + (b - a) * u)); }

}  // namespace

MaskSpec mask_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("mask spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "rect" && key != "movement" && key != "endpoint" && key != "frames") {
      throw DataError("unexpected mask spec field '" + key + "'");
    }
  }
  if (!j.contains("rect") || !j.contains("movement") || !j.contains("frames")) {
    throw DataError("mask spec requires rect, movement and frames");
  }
  MaskSpec spec;
  spec.rect = rect_from_json(j.at("rect"), "rect");
  if (!j.at("movement").is_string()) throw DataError("movement must be a string");
  spec.movement = movement_from_string(j.at("movement").get<std::string>());
  if (j.contains("endpoint") && !j.at("endpoint").is_null()) spec.endpoint = rect_from_json(j.at("endpoint"), "endpoint");
  if (spec.movement == Movement::Linear && !spec.endpoint) throw DataError("linear movement requires an endpoint");
  const auto& f = j.at("frames");
  if (!f.is_array() || f.size() != 2 || !f[0].is_number_integer() || !f[1].is_number_integer()) {
    throw DataError("frames must be [first, last]");
  }
  spec.first_frame = f[0].get<int>();
  spec.last_frame = f[1].get<int>();
  if (spec.first_frame < 0 || spec.last_frame < spec.first_frame) throw DataError("frames must satisfy 0 <= a <= b");
  return spec;
}

nlohmann::json mask_spec_to_json(const MaskSpec& spec) {
  nlohmann::json j{{"rect", {spec.rect.x, spec.rect.y, spec.rect.w, spec.rect.h}},
                   {"movement", to_string(spec.movement)},
                   {"frames", {spec.first_frame, spec.last_frame}}};
  if (spec.endpoint) j["endpoint"] = {spec.endpoint->x, spec.endpoint->y, spec.endpoint->w, spec.endpoint->h};
  return j;
}

std::optional<Rect> track_rect_at(const MaskSpec& spec, int t, int height, int width, const VelocityProvider& velocity) {
  if (spec.rect.w <= 0 || spec.rect.h <= 0) throw DataError("degenerate mask rectangle");
  if (t < spec.first_frame || t > spec.last_frame) return std::nullopt;
  Rect r = spec.rect;
  switch (spec.movement) {
    case Movement::Fixed: break;
    case Movement::Linear: {
      if (!spec.endpoint) throw DataError("linear movement requires an endpoint");
      const int span = spec.last_frame - spec.first_frame;
      const double u = span == 0 ? 0.0 : static_cast<double>(t - spec.first_frame) / span;
      const Rect& e = *spec.endpoint;
      r = Rect{lerp_round(spec.rect.x, e.x, u), lerp_round(spec.rect.y, e.y, u), lerp_round(spec.rect.w, e.w, u),
               lerp_round(spec.rect.h, e.h, u)};
      break;
    }
    case Movement::Flow: {
      if (!velocity) throw DataError("flow movement needs a velocity source (scene metadata)");
      // Integrate the mean motion under the box frame by frame.
      double x = spec.rect.x;
      double y = spec.rect.y;
      for (int f = spec.first_frame; f < t; ++f) {
        Rect cur{static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)), spec.rect.w, spec.rect.h};
        const auto v = velocity(f, clip_rect(cur, height, width));
        x += v[0];
        y += v[1];
      }
      r.x = static_cast<int>(std::lround(x));
      r.y = static_cast<int>(std::lround(y));
      break;
    }
  }
  return clip_rect(r, height, width);
}

MaskTrack mask_rectangle_track(const MaskSpec& spec, int frames, int height, int width,
                               const VelocityProvider& velocity) {
  codec::validate_clip_shape(frames, height, width);
  MaskTrack track;
  track.frames = frames;
  track.height = height;
  track.width = width;
  track.pixels.assign(static_cast<std::size_t>(frames) * height * width, 0);
  for (int t = 0; t < frames; ++t) {
    const auto r = track_rect_at(spec, t, height, width, velocity);
    if (!r) continue;
    for (int y = r->y; y < r->y + r->h; ++y) {
      for (int x = r->x; x < r->x + r->w; ++x) track.at(t, y, x) = 1;
    }
  }
  codec::encode_mask(track);
  return track;
}

MaskedVideoLatent mask_video(const VideoClip& clip, const MaskTrack& track) {
  if (clip.frames != track.frames || clip.height != track.height || clip.width != track.width) {
    throw ShapeError("mask track does not match the clip");
  }
  VideoClip masked = clip;
  for (int t = 0; t < clip.frames; ++t) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) {
        if (track.at(t, y, x) == 0) continue;
        for (int c = 0; c < 3; ++c) masked.at(t, y, x, c) = 0.0;
      }
    }
  }
  MaskedVideoLatent out;
  out.latent = codec::encode_video(masked);
  out.mask = codec::encode_mask(track.frames, track.height, track.width, track.pixels);
  return out;
}

VideoInsertionBranch VideoInsertionBranch::create(const Backbone& backbone, const ControlConfig& control) {
  control.validate(backbone.config.blocks);
  VideoInsertionBranch vib;
  vib.video_embed = backbone.patch_embed;
  vib.video_embed.rename("edit.video_embed");
  for (std::size_t j = 0; j < control.placement.size(); ++j) {
    vib.blocks.push_back(backbone.blocks[control.placement[j]].copy_as("edit.block" + std::to_string(j)));
  }
  vib.set_trainable(true);
  return vib;
}

void VideoInsertionBranch::collect(std::vector<Parameter*>& out) {
  video_embed.collect(out);
  for (auto& b : blocks) b.collect(out);
}

void VideoInsertionBranch::collect(std::vector<const Parameter*>& out) const {
  video_embed.collect(out);
  for (const auto& b : blocks) b.collect(out);
}

void VideoInsertionBranch::set_trainable(bool trainable) {
  std::vector<Parameter*> ps;
  collect(ps);
  for (Parameter* p : ps) p->trainable = trainable;
}

std::size_t VideoInsertionBranch::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  return count_parameters(ps);
}

void widen_for_editing(ControlBranch& cb, std::uint64_t seed, bool random_video_half) {
  Rng rng(seed);
  for (auto& b : cb.blocks) {
    const Mat& w = b.out_up.weight.value;
    const Eigen::Index d = w.rows();
    if (d != b.out_down.out_features()) throw ShapeError("residual head is already widened");
    Mat wide = Mat::Zero(2 * d, w.cols());
    wide.topRows(d) = w;
    if (random_video_half) {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(2 * d)));
      for (Eigen::Index i = d; i < 2 * d; ++i) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) wide(i, c) = dist(rng);
      }
    }
    b.out_up.weight.value = std::move(wide);
  }
}

VideoInsertionOutput video_insertion_forward(Tape& t, const DiTBlock& block, Var video_prev, Var cond, int heads) {
  Var v = dit_block_forward(t, block, video_prev, cond, heads);
  return {v, v};
}

Var fuse_branches(Tape& t, Var propagated, Var video, const ColVec& mask) {
  const Mat& c = t.value(propagated);
  const Mat& v = t.value(video);
  if (c.rows() != v.rows() || c.cols() != v.cols()) throw ShapeError("fusion branches differ in shape");
  if (mask.size() != c.rows()) throw ShapeError("latent mask does not match the video tokens");
  const ColVec inverted = ColVec::Ones(mask.size()) - mask;
  return ops::concat_cols(t, ops::mul_rows(t, propagated, mask), ops::mul_rows(t, video, inverted));
}

Var run_edit_branch(Tape& t, const Backbone& bb, const ControlBranch& cb, const VideoInsertionBranch& vib,
                    const DenoiseInput& in, const SketchCondition* sketches, const EditInputs& edit,
                    ResidualMap* residuals_out, ControlTrace* trace) {
  if (vib.blocks.size() != cb.blocks.size()) throw ShapeError("insertion branch does not match the control blocks");
  if (edit.masked_latent.rows() != in.layout.tokens() || edit.mask.size() != in.layout.tokens()) {
    throw ShapeError("edit inputs do not match the clip layout");
  }
  const int d = bb.config.width;
  Var video = vib.video_embed.forward(t, t.constant(edit.masked_latent));
  if (bb.config.positional_embedding) video = ops::add(t, video, t.constant(video_positions(in.layout, d)));

  auto residual_fn = [&](Tape& tp, int j, std::optional<Var> propagated, Var cond) -> Var {
    VideoInsertionOutput vo = video_insertion_forward(tp, vib.blocks[j], video, cond, cb.heads);
    video = vo.next;
    Var c = propagated ? ops::layer_norm(tp, *propagated) : tp.constant(Mat::Zero(in.layout.tokens(), d));
    Var fused = fuse_branches(tp, c, ops::layer_norm(tp, vo.features), edit.mask);
    const SketchControlBlock& block = cb.blocks[j];
    return feed_forward(tp, block.out_up, block.out_down, fused, false, false);
  };
  return run_control_branch(t, bb, cb, in, sketches, residuals_out, trace, residual_fn);
}

}  // namespace sketchdit
