#include "sketchdit/pipeline.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <algorithm>

namespace sketchdit {

Conditioning make_conditioning(const std::string& prompt, const std::optional<KeyframeSketchSet>& sketches, int frames,
                               int height, int width) {
  codec::validate_clip_shape(frames, height, width);
  Conditioning c;
  c.layout = LatentLayout::video(codec::latent_frames(frames), height / codec::kSpatial, width / codec::kSpatial);
  c.prompt = Tokenizer::encode(prompt);
  if (sketches) c.sketches = resolve_sketches(*sketches, frames, height, width);
  return c;
}

VideoClip decode_model_latent(const Mat& z, int frames, int height, int width) {
  LatentVideo lv;
  lv.frames = codec::latent_frames(frames);
  lv.grid_h = height / codec::kSpatial;
  lv.grid_w = width / codec::kSpatial;
  if (z.rows() != lv.tokens() || z.cols() != codec::kChannels) throw ShapeError("latent does not match the clip shape");
  lv.values = from_model_space(z).cwiseMax(0.0).cwiseMin(1.0);
  return codec::decode_video(lv);
}

VideoClip generate_video(const SketchVideoModel& model, const GenerateRequest& request) {
  if (model.is_editing()) throw std::invalid_argument("generation needs a generation checkpoint");
  Conditioning cond = make_conditioning(request.prompt, request.sketches, request.frames, request.height, request.width);
  if (cond.sketches && !model.control) throw std::invalid_argument("checkpoint has no sketch branch");
  std::mt19937_64 rng(request.seed);
  Mat z = gaussian(cond.layout.tokens(), codec::kChannels, rng);
  z = ddim_sample(model.schedule, velocity_fn(model, cond), std::move(z), request.sampler);
  return decode_model_latent(z, request.frames, request.height, request.width);
}

EditResult edit_video(const SketchVideoModel& model, const EditRequest& request) {
  const VideoClip& src = request.source;
  if (request.track.frames != src.frames || request.track.height != src.height || request.track.width != src.width) {
    throw ShapeError("mask track does not match the source video");
  }
  Conditioning cond = make_conditioning(request.prompt, request.sketches, src.frames, src.height, src.width);
  const MaskedVideoLatent masked = mask_video(src, request.track);
  const ColVec mask = masked.mask.as_weights();
  if (model.insertion) cond.edit = EditInputs{to_model_space(masked.latent.values), mask};
  if (cond.sketches && !model.control) throw std::invalid_argument("checkpoint has no sketch branch");

  const VelocityFn fn = velocity_fn(model, cond);
  InversionConfig inv_cfg = request.inversion;
  inv_cfg.steps = request.sampler.steps;
  EditResult out;
  out.inversion = ddim_invert(model.schedule, fn, to_model_space(codec::encode_video(src).values), inv_cfg);
  FusionPolicy policy = request.fusion;
  if (!request.latent_fusion) policy.steps.clear();
  const Mat z = latent_fusion_sample(model.schedule, fn, out.inversion, mask, request.sampler, policy);
  out.video = decode_model_latent(z, src.frames, src.height, src.width);
  return out;
}

VideoClip pixel_blend(const VideoClip& source, const VideoClip& edited, const MaskTrack& track) {
  if (!(source.frames == edited.frames && source.height == edited.height && source.width == edited.width &&
        track.frames == source.frames && track.height == source.height && track.width == source.width)) {
    throw ShapeError("pixel blend inputs differ in shape");
  }
  VideoClip out = edited;
  for (int t = 0; t < out.frames; ++t) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        if (track.at(t, y, x) != 0) continue;
        for (int c = 0; c < 3; ++c) out.at(t, y, x, c) = source.at(t, y, x, c);
      }
    }
  }
  return out;
}

}  // namespace sketchdit
