#include "sketchdit/control.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sketchdit {

std::string to_string(Propagation p) {
  switch (p) {
    case Propagation::InterFrame: return "inter_frame";
    case Propagation::TemporalConcat: return "temporal_concat";
    case Propagation::SketchKeyValue: return "sketch_kv";
  }
  return "inter_frame";
}

Propagation propagation_from_string(const std::string& s) {
  if (s == "inter_frame") return Propagation::InterFrame;
  if (s == "temporal_concat") return Propagation::TemporalConcat;
  if (s == "sketch_kv") return Propagation::SketchKeyValue;
  throw std::invalid_argument("unknown propagation mode '" + s + "'");
}

void ControlConfig::validate(int backbone_blocks) const {
  if (placement.empty()) throw RangeError("control placement is empty");
  for (std::size_t i = 0; i < placement.size(); ++i) {
    if (placement[i] < 0 || placement[i] >= backbone_blocks) {
      throw RangeError("control placement index " + std::to_string(placement[i]) + " outside [0, " +
                       std::to_string(backbone_blocks) + ")");
    }
    if (i > 0 && placement[i] <= placement[i - 1]) throw RangeError("control placement must be strictly increasing");
  }
  if (out_hidden_mult < 1) throw ShapeError("out_hidden_mult must be positive");
  if (share_qk_with_backbone && propagation != Propagation::InterFrame) {
    throw std::invalid_argument("shared Q/K projections only apply to inter-frame attention");
  }
}

std::vector<int> ControlConfig::uniform_placement(int backbone_blocks, int count) {
  std::vector<int> p;
  for (int i = 0; i < count; ++i) p.push_back(i * backbone_blocks / count);
  return p;
}

std::vector<int> ControlConfig::consecutive_placement(int first, int count) {
  std::vector<int> p;
  for (int i = 0; i < count; ++i) p.push_back(first + i);
  return p;
}

void to_json(nlohmann::json& j, const ControlConfig& c) {
  j = nlohmann::json{{"placement", c.placement},
                     {"propagation", to_string(c.propagation)},
                     {"share_qk_with_backbone", c.share_qk_with_backbone},
                     {"position_code", c.position_code},
                     {"out_hidden_mult", c.out_hidden_mult}};
}

void from_json(const nlohmann::json& j, ControlConfig& c) {
  c.placement = j.at("placement").get<std::vector<int>>();
  c.propagation = propagation_from_string(j.value("propagation", std::string("inter_frame")));
  c.share_qk_with_backbone = j.value("share_qk_with_backbone", false);
  c.position_code = j.value("position_code", true);
  c.out_hidden_mult = j.value("out_hidden_mult", 2);
}

SketchCondition resolve_sketches(const KeyframeSketchSet& set, int clip_frames, int height, int width,
                                 std::optional<int> declared_time) {
  const auto k = set.sketches.size();
  if (k < 1 || k > 2) throw RangeError("expected one or two keyframe sketches, got " + std::to_string(k));
  if (set.time_points.size() != k) throw ShapeError("each sketch needs exactly one time point");
  if (k == 2 && set.time_points[0] >= set.time_points[1]) throw RangeError("time points must satisfy t1 < t2");
  if (declared_time && (clip_frames != 1 || k != 1)) {
    throw std::invalid_argument("a declared time only applies to single-frame clips with one sketch");
  }
  SketchCondition out;
  out.latents.resize(static_cast<Eigen::Index>(k) * (height / codec::kSpatial) * (width / codec::kSpatial),
                     codec::kChannels);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const int tp = set.time_points[i];
    if (tp < 0 || tp >= clip_frames) {
      throw RangeError("time point " + std::to_string(tp) + " outside [0, " + std::to_string(clip_frames) + ")");
    }
    const BinaryMap& s = set.sketches[i];
    if (s.height != height || s.width != width) throw ShapeError("sketch size does not match the video");
    Mat enc = codec::encode_sketch(s);
    out.latents.middleRows(row, enc.rows()) = enc;
    row += enc.rows();
    const int kappa = codec::latent_frame_of(tp);
    out.key_frames.push_back(kappa);
    out.positions.push_back(declared_time ? codec::latent_frame_of(*declared_time) : kappa);
  }
  return out;
}

void SketchControlBlock::collect(std::vector<Parameter*>& out) {
  sketch_up.collect(out);
  sketch_down.collect(out);
  copy.collect(out);
  w_q.collect(out);
  w_k.collect(out);
  w_v.collect(out);
  if (pos_code.value.size() > 0) out.push_back(&pos_code);
  out_up.collect(out);
  out_down.collect(out);
}

void SketchControlBlock::collect(std::vector<const Parameter*>& out) const {
  sketch_up.collect(out);
  sketch_down.collect(out);
  copy.collect(out);
  w_q.collect(out);
  w_k.collect(out);
  w_v.collect(out);
  if (pos_code.value.size() > 0) out.push_back(&pos_code);
  out_up.collect(out);
  out_down.collect(out);
}

Mat initial_position_code(int positions, int width, int heads, double logit, Rng& rng) {
  if (heads < 1 || width % heads != 0) throw ShapeError("position code width must split into heads");
  const int dh = width / heads;
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(std::max(positions, dh), dh);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Mat rows;
  if (positions <= dh) {
    const Eigen::HouseholderQR<Mat> qr(g.transpose());
    rows = Mat(qr.householderQ()).transpose().topRows(positions);
  } else {
    rows = g.rowwise().normalized();
  }
  // q.k / sqrt(dh) = scale^2 / sqrt(dh) for a matching pair.
  const double scale = std::sqrt(logit * std::sqrt(static_cast<double>(dh)));
  Mat code(positions, width);
  for (int h = 0; h < heads; ++h) code.middleCols(h * dh, dh) = scale * rows;
  return code;
}

ControlBranch ControlBranch::create(const Backbone& backbone, const ControlConfig& config, std::uint64_t seed) {
  config.validate(backbone.config.blocks);
  Rng rng(seed);
  const int d = backbone.config.width;
  ControlBranch cb;
  cb.config = config;
  cb.heads = backbone.config.heads;
  cb.sketch_embed = Linear("control.sketch_embed", codec::kChannels, d, rng);
  for (std::size_t j = 0; j < config.placement.size(); ++j) {
    const std::string name = "control.block" + std::to_string(j);
    SketchControlBlock b;
    b.backbone_block = config.placement[j];
    b.sketch_up = Linear(name + ".sketch_up", d, backbone.config.ff_mult * d, rng);
    b.sketch_down = Linear(name + ".sketch_down", backbone.config.ff_mult * d, d, rng);
    b.copy = backbone.blocks[b.backbone_block].copy_as(name + ".copy");
    b.copy.set_trainable(true);
    b.w_q = Linear(name + ".w_q", d, d, rng, Init::Normal, false);
    b.w_k = Linear(name + ".w_k", d, d, rng, Init::Normal, false);
    b.w_v = Linear(name + ".w_v", d, d, rng, Init::Normal, false);
    if (config.position_code) {
      b.pos_code.name = name + ".pos_code";
      b.pos_code.value =
          initial_position_code(backbone.config.grid_h * backbone.config.grid_w, d, backbone.config.heads, 4.0, rng);
    }
    b.out_up = Linear(name + ".out_up", d, config.out_hidden_mult * d, rng);
    b.out_down = Linear(name + ".out_down", config.out_hidden_mult * d, d, rng, Init::Zero);
    cb.blocks.push_back(std::move(b));
  }
  return cb;
}

int ControlBranch::index_of_block(int backbone_block) const {
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    if (blocks[j].backbone_block == backbone_block) return static_cast<int>(j);
  }
  return -1;
}

void ControlBranch::collect(std::vector<Parameter*>& out) {
  sketch_embed.collect(out);
  for (auto& b : blocks) b.collect(out);
}

void ControlBranch::collect(std::vector<const Parameter*>& out) const {
  sketch_embed.collect(out);
  for (const auto& b : blocks) b.collect(out);
}

void ControlBranch::set_trainable(bool trainable) {
  std::vector<Parameter*> ps;
  collect(ps);
  for (Parameter* p : ps) p->trainable = trainable;
}

std::size_t ControlBranch::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  return count_parameters(ps);
}

Var encode_sketch_condition(Tape& t, const Backbone& bb, const ControlBranch& cb, const SketchCondition& cond) {
  const int hw = bb.config.grid_h * bb.config.grid_w;
  if (cond.latents.rows() != static_cast<Eigen::Index>(cond.count()) * hw) {
    throw ShapeError("sketch latents do not match the backbone grid");
  }
  Var x = cb.sketch_embed.forward(t, t.constant(cond.latents));
  if (!bb.config.positional_embedding) return x;
  LatentLayout layout;
  layout.grid_h = bb.config.grid_h;
  layout.grid_w = bb.config.grid_w;
  layout.time_positions = cond.positions;
  return ops::add(t, x, t.constant(video_positions(layout, bb.config.width)));
}

Var sketch_dit_copy(Tape& t, const SketchControlBlock& block, Var sketch_tokens, Var cond, int heads) {
  return dit_block_forward(t, block.copy, sketch_tokens, cond, heads);
}

Var inter_frame_attention(Tape& t, const SketchControlBlock& block, const DiTBlock* backbone_block,
                          Propagation mode, Var hidden_all, const std::vector<int>& key_frames,
                          int tokens_per_frame, Var control_key, int heads, ops::AttentionProbs* capture) {
  const auto video_tokens = static_cast<int>(t.value(hidden_all).rows());
  if (tokens_per_frame <= 0 || video_tokens % tokens_per_frame != 0) {
    throw ShapeError("hidden features are not a whole number of frames");
  }
  const int frames = video_tokens / tokens_per_frame;
  if (key_frames.empty() ||
      t.value(control_key).rows() != static_cast<Eigen::Index>(key_frames.size()) * tokens_per_frame) {
    throw ShapeError("misaligned keyframe slice: control features do not cover the keyframes");
  }
  std::vector<int> rows;
  for (int kf : key_frames) {
    if (kf < 0 || kf >= frames) throw ShapeError("misaligned keyframe slice: keyframe outside the clip");
    for (int i = 0; i < tokens_per_frame; ++i) rows.push_back(kf * tokens_per_frame + i);
  }
  Var h_norm = ops::layer_norm(t, hidden_all);
  const Linear& proj_q = (backbone_block != nullptr) ? backbone_block->q : block.w_q;
  const Linear& proj_k = (backbone_block != nullptr) ? backbone_block->k : block.w_k;
  const bool coded = block.pos_code.value.size() > 0;
  if (coded && block.pos_code.value.rows() != tokens_per_frame) {
    throw ShapeError("position code does not match the frame size");
  }
  auto with_code = [&](Var x, int count) {
    if (!coded) return x;
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i % tokens_per_frame;
    return ops::add(t, x, ops::gather_rows(t, t.param(block.pos_code), idx));
  };
  const auto control_rows = static_cast<int>(t.value(control_key).rows());

  switch (mode) {
    case Propagation::InterFrame: {
      Var h_key = ops::gather_rows(t, h_norm, rows);
      return ops::attention(t, with_code(proj_q.forward(t, h_norm), video_tokens),
                            with_code(proj_k.forward(t, h_key), static_cast<int>(rows.size())),
                            block.w_v.forward(t, control_key), heads, capture);
    }
    case Propagation::SketchKeyValue:
      return ops::attention(t, with_code(proj_q.forward(t, h_norm), video_tokens),
                            with_code(block.w_k.forward(t, control_key), control_rows),
                            block.w_v.forward(t, control_key), heads, capture);
    case Propagation::TemporalConcat: {
      Var joint = ops::concat_rows(t, {h_norm, control_key});
      const int n = video_tokens + control_rows;
      Var out = ops::attention(t, with_code(proj_q.forward(t, joint), n), with_code(proj_k.forward(t, joint), n),
                               block.w_v.forward(t, joint), heads, capture);
      return ops::slice_rows(t, out, 0, video_tokens);
    }
  }
  throw std::logic_error("unhandled propagation mode");
}

ControlBlockOutput sketch_control_block(Tape& t, const Backbone& bb, const ControlBranch& cb, int index,
                                        Var sketch_prev, Var hidden_video, Var cond,
                                        const SketchCondition& cond_info, int tokens_per_frame, bool with_head,
                                        ops::AttentionProbs* capture) {
  const SketchControlBlock& block = cb.blocks.at(index);
  ControlBlockOutput out;
  out.sketch_state = feed_forward(t, block.sketch_up, block.sketch_down, sketch_prev, true, true);
  Var c = sketch_dit_copy(t, block, out.sketch_state, cond, cb.heads);
  const DiTBlock* shared = cb.config.share_qk_with_backbone ? &bb.blocks[block.backbone_block] : nullptr;
  out.propagated = inter_frame_attention(t, block, shared, cb.config.propagation, hidden_video, cond_info.key_frames,
                                         tokens_per_frame, c, cb.heads, capture);
  if (with_head) out.residual = feed_forward(t, block.out_up, block.out_down, out.propagated, true, false);
  return out;
}

Var run_control_branch(Tape& t, const Backbone& bb, const ControlBranch& cb, const DenoiseInput& in,
                       const SketchCondition* sketches, ResidualMap* residuals_out, ControlTrace* trace,
                       const ResidualFn& residual_fn) {
  cb.config.validate(bb.config.blocks);
  if (sketches == nullptr && !residual_fn) return denoise(t, bb, in, BlockHook{});
  if (trace != nullptr) trace->attention.assign(cb.blocks.size(), {});

  std::optional<Var> sketch_state;
  if (sketches != nullptr) {
    for (int kf : sketches->key_frames) {
      if (kf < 0 || kf >= in.layout.frames()) throw RangeError("keyframe outside the conditioned clip");
    }
    sketch_state = encode_sketch_condition(t, bb, cb, *sketches);
  }
  const int hw = in.layout.tokens_per_frame();
  auto hook = [&](int block, Var hidden, Var cond) -> std::optional<Var> {
    const int j = cb.index_of_block(block);
    if (j < 0) return std::nullopt;
    std::optional<Var> propagated;
    Var residual;
    if (sketch_state) {
      ControlBlockOutput o = sketch_control_block(t, bb, cb, j, *sketch_state, hidden, cond, *sketches, hw,
                                                  !residual_fn, trace ? &trace->attention[j] : nullptr);
      sketch_state = o.sketch_state;
      propagated = o.propagated;
      residual = o.residual;
    }
    if (residual_fn) residual = residual_fn(t, j, propagated, cond);
    if (residuals_out != nullptr) (*residuals_out)[block] = residual;
    return residual;
  };
  return denoise(t, bb, in, hook);
}

AttentionDump dump_attention_maps(const Backbone& bb, const ControlBranch& cb, const DenoiseInput& in,
                                  const SketchCondition& sketches, int block, int frame) {
  const int j = cb.index_of_block(block);
  if (j < 0) throw RangeError("block " + std::to_string(block) + " carries no sketch control block");
  if (frame < 0 || frame >= in.layout.frames()) throw RangeError("query frame outside the clip");
  Tape t(false);
  ControlTrace trace;
  run_control_branch(t, bb, cb, in, &sketches, nullptr, &trace);
  AttentionDump dump;
  dump.block = block;
  dump.frame = frame;
  dump.key_frames = sketches.key_frames;
  dump.grid_h = in.layout.grid_h;
  dump.grid_w = in.layout.grid_w;
  const int hw = in.layout.tokens_per_frame();
  const int keys = sketches.count() * hw;
  // Joint attention lists the frame tokens first; keep only the sketch keys.
  const int first_key = cb.config.propagation == Propagation::TemporalConcat ? in.layout.tokens() : 0;
  for (const Mat& probs : trace.attention[j].heads) {
    dump.heads.push_back(probs.block(static_cast<Eigen::Index>(frame) * hw, first_key, hw, keys));
  }
  return dump;
}

}  // namespace sketchdit
