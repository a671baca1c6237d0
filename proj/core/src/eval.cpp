#include "sketchdit/eval.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace sketchdit {

// ---------------------------------------------------------------------------
// Metrics

namespace {

// Pixels of `from` that have a set pixel of `to` within the tolerance window.
std::size_t matched(const BinaryMap& from, const BinaryMap& to, int tol) {
  std::size_t n = 0;
  for (int y = 0; y < from.height; ++y) {
    for (int x = 0; x < from.width; ++x) {
      if (!from.at(y, x)) continue;
      bool hit = false;
      for (int dy = -tol; dy <= tol && !hit; ++dy) {
        for (int dx = -tol; dx <= tol && !hit; ++dx) {
          const int yy = y + dy, xx = x + dx;
          hit = yy >= 0 && yy < to.height && xx >= 0 && xx < to.width && to.at(yy, xx);
        }
      }
      n += hit ? 1 : 0;
    }
  }
  return n;
}

const Mat& consistency_projection() {
  static const Mat proj = [] {
    std::mt19937_64 rng(kConsistencyProjectionSeed);
    return gaussian(kConsistencyDims, kConsistencyGrid * kConsistencyGrid * 3, rng);
  }();
  return proj;
}

std::string sha256_hex(const std::string& s) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(s.data(), s.size(), digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

double edge_f1(const BinaryMap& reference, const BinaryMap& predicted, int tolerance) {
  if (reference.height != predicted.height || reference.width != predicted.width) {
    throw ShapeError("edge maps differ in shape");
  }
  const std::size_t n_ref = reference.count();
  const std::size_t n_pred = predicted.count();
  if (n_ref == 0 && n_pred == 0) return 1.0;
  if (n_ref == 0 || n_pred == 0) return 0.0;
  const double precision = static_cast<double>(matched(predicted, reference, tolerance)) / static_cast<double>(n_pred);
  const double recall = static_cast<double>(matched(reference, predicted, tolerance)) / static_cast<double>(n_ref);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double edge_fidelity(const BinaryMap& sketch, const VideoClip& clip, int frame) {
  if (sketch.height != clip.height || sketch.width != clip.width) throw ShapeError("sketch and frame differ in shape");
  return edge_f1(sketch, extract_sketch(clip, frame));
}

Eigen::VectorXd consistency_feature(const VideoClip& clip, int frame) {
  if (frame < 0 || frame >= clip.frames) throw RangeError("frame outside the clip");
  constexpr int g = kConsistencyGrid;
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(g * g * 3);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(g * g * 3);
  for (int y = 0; y < clip.height; ++y) {
    const int by = y * g / clip.height;
    for (int x = 0; x < clip.width; ++x) {
      const int bx = x * g / clip.width;
      for (int c = 0; c < 3; ++c) {
        const int i = (by * g + bx) * 3 + c;
        pooled[i] += clip.at(frame, y, x, c);
        counts[i] += 1.0;
      }
    }
  }
  pooled = pooled.cwiseQuotient(counts.cwiseMax(1.0));
  pooled.array() -= pooled.mean();
  return consistency_projection() * pooled;
}

double temporal_consistency(const VideoClip& clip) {
  if (clip.frames < 2) throw RangeError("temporal consistency needs at least two frames");
  std::vector<Eigen::VectorXd> f;
  for (int t = 0; t < clip.frames; ++t) f.push_back(consistency_feature(clip, t));
  double sum = 0.0;
  for (int t = 0; t + 1 < clip.frames; ++t) {
    const double na = f[t].norm(), nb = f[t + 1].norm();
    constexpr double eps = 1e-12;
    if (na < eps && nb < eps) {
      sum += 1.0;
    } else if (na >= eps && nb >= eps) {
      sum += f[t].dot(f[t + 1]) / (na * nb);
    }
  }
  return sum / (clip.frames - 1);
}

double psnr_unedited(const VideoClip& original, const VideoClip& edited, const MaskTrack& track) {
  if (!(original.frames == edited.frames && original.height == edited.height && original.width == edited.width &&
        track.frames == original.frames && track.height == original.height && track.width == original.width)) {
    throw ShapeError("psnr inputs differ in shape");
  }
  double se = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < original.frames; ++t) {
    for (int y = 0; y < original.height; ++y) {
      for (int x = 0; x < original.width; ++x) {
        if (track.at(t, y, x)) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = original.at(t, y, x, c) - edited.at(t, y, x, c);
          se += d * d;
          ++n;
        }
      }
    }
  }
  if (n == 0) throw RangeError("the mask leaves no unedited pixels");
  const double mse = se / static_cast<double>(n);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Cost accounting

namespace {

double linear_params(double in, double out, bool bias = true) { return in * out + (bias ? out : 0.0); }
double linear_flops(double tokens, double in, double out) { return 2.0 * tokens * in * out; }

double dit_params(double d, double f) {
  return linear_params(d, 4 * d) + 4 * linear_params(d, d) + linear_params(d, f * d) + linear_params(f * d, d);
}

// Self-attention block over n tokens; modulation runs once on the timestep vector.
double dit_flops(double n, double d, double f) {
  return linear_flops(1, d, 4 * d) + 4 * linear_flops(n, d, d) + 2.0 * 2.0 * n * n * d +
         linear_flops(n, d, f * d) + linear_flops(n, f * d, d);
}

}  // namespace

const CostRow& CostTable::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no cost row " + name);
}

CostTable cost_table(const BackboneConfig& bb, const ControlConfig& control, int keyframes) {
  bb.validate();
  control.validate(bb.blocks);
  if (keyframes < 1 || keyframes > 2) throw RangeError("keyframes must be 1 or 2");
  const double d = bb.width, f = bb.ff_mult, m = control.out_hidden_mult;
  const double c = codec::kChannels;
  const double hw = static_cast<double>(bb.grid_h) * bb.grid_w;
  const double n_video = bb.video_tokens();
  const double n_text = bb.max_text_tokens;
  const double n_all = n_video + n_text;
  const double n_sketch = keyframes * hw;
  const double blocks = bb.blocks;
  const double n_ctrl = static_cast<double>(control.placement.size());

  CostTable table;
  table.backbone = bb;
  table.keyframes = keyframes;

  const double base_params = Tokenizer::vocab_size() * d + linear_params(c, d) + 2 * linear_params(d, d) +
                             blocks * dit_params(d, f) + linear_params(d, 2 * d) + linear_params(d, c) + c;
  const double base_flops = linear_flops(n_video, c, d) + 2 * linear_flops(1, d, d) + blocks * dit_flops(n_all, d, f) +
                            linear_flops(1, d, 2 * d) + linear_flops(n_video, d, c);
  table.rows.push_back({"base", static_cast<std::size_t>(base_params), 0, base_flops, 0});

  auto ctrl = [&](int copies) {
    // condition embedding, then per copy: a block over the full sequence and a zero linear.
    const double p = linear_params(c, d) + copies * (dit_params(d, f) + linear_params(d, d));
    const double fl = linear_flops(n_video, c, d) + copies * (dit_flops(n_all, d, f) + linear_flops(n_video, d, d));
    return CostRow{"ctrl-" + std::to_string(copies), static_cast<std::size_t>(base_params + p),
                   static_cast<std::size_t>(p), base_flops + fl, fl};
  };

  double attn_flops = 0;
  switch (control.propagation) {
    case Propagation::InterFrame:
      attn_flops = linear_flops(n_video, d, d) + 2 * linear_flops(n_sketch, d, d) + 2.0 * 2.0 * n_video * n_sketch * d;
      break;
    case Propagation::SketchKeyValue:
      attn_flops = linear_flops(n_video, d, d) + 2 * linear_flops(n_sketch, d, d) + 2.0 * 2.0 * n_video * n_sketch * d;
      break;
    case Propagation::TemporalConcat: {
      const double n = n_video + n_sketch;
      attn_flops = 3 * linear_flops(n, d, d) + 2.0 * 2.0 * n * n * d;
      break;
    }
  }
  const double code = control.position_code ? 1.0 : 0.0;
  const double code_flops =
      code * (control.propagation == Propagation::TemporalConcat ? 2.0 * (n_video + n_sketch) : n_video + n_sketch) * d;
  const double ours_block_params = linear_params(d, f * d) + linear_params(f * d, d) + dit_params(d, f) +
                                   3 * linear_params(d, d, false) + code * hw * d + linear_params(d, m * d) +
                                   linear_params(m * d, d);
  const double ours_block_flops = linear_flops(n_sketch, d, f * d) + linear_flops(n_sketch, f * d, d) +
                                  dit_flops(n_sketch, d, f) + attn_flops + code_flops + linear_flops(n_video, d, m * d) +
                                  linear_flops(n_video, m * d, d);
  const double ours_p = linear_params(c, d) + n_ctrl * ours_block_params;
  const double ours_f = linear_flops(n_sketch, c, d) + n_ctrl * ours_block_flops;

  // Editing adds a block copy over the video tokens per control block, its
  // patch embedding, and the video half of each widened residual input.
  const double edit_extra_p = linear_params(c, d) + n_ctrl * (dit_params(d, f) + d * m * d);
  const double edit_extra_f =
      linear_flops(n_video, c, d) + n_ctrl * (dit_flops(n_video, d, f) + linear_flops(n_video, d, m * d));

  const CostRow ctrl5 = ctrl(static_cast<int>(n_ctrl));
  const CostRow ctrl10 = ctrl(2 * static_cast<int>(n_ctrl));
  table.rows.push_back(ctrl5);
  table.rows.push_back({"ours", static_cast<std::size_t>(base_params + ours_p), static_cast<std::size_t>(ours_p),
                        base_flops + ours_f, ours_f});
  table.rows.push_back(ctrl10);
  table.rows.push_back({"edit", static_cast<std::size_t>(base_params + ours_p + edit_extra_p),
                        static_cast<std::size_t>(ours_p + edit_extra_p), base_flops + ours_f + edit_extra_f,
                        ours_f + edit_extra_f});
  table.copy_ratio = (n_ctrl * dit_params(d, f)) / (blocks * dit_params(d, f));
  return table;
}

std::string CostTable::markdown() const {
  std::ostringstream os;
  os << "| model | parameters | branch parameters | GFLOPs | branch GFLOPs |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    os << "| " << r.name << " | " << r.parameters << " | " << r.branch_parameters << " | " << fmt(r.flops / 1e9, 3)
       << " | " << fmt(r.branch_flops / 1e9, 3) << " |\n";
  }
  os << "\ncopy-block / backbone-block parameter ratio: " << fmt(copy_ratio, 6) << "\n";
  return os.str();
}

std::string CostTable::csv() const {
  std::ostringstream os;
  os << "model,parameters,branch_parameters,flops,branch_flops\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.name << ',' << r.parameters << ',' << r.branch_parameters << ',' << r.flops << ',' << r.branch_flops << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Generation and editing evaluation

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double keyframe_f1(const KeyframeSketchSet& set, const VideoClip& clip) {
  double sum = 0.0;
  for (std::size_t i = 0; i < set.sketches.size(); ++i) sum += edge_fidelity(set.sketches[i], clip, set.time_points[i]);
  return sum / static_cast<double>(set.sketches.size());
}

}  // namespace

nlohmann::json GenerationReport::json() const {
  nlohmann::json j;
  j["edge_f1"] = edge_f1;
  j["edge_f1_baseline"] = edge_f1_baseline;
  j["temporal_consistency"] = temporal_consistency;
  j["corpus_temporal_consistency"] = corpus_temporal_consistency;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    arr.push_back({{"id", s.id},
                   {"keyframes", s.keyframes},
                   {"edge_f1", s.edge_f1},
                   {"edge_f1_baseline", s.edge_f1_baseline},
                   {"temporal_consistency", s.temporal_consistency}});
  }
  return j;
}

GenerationReport evaluate_generation(const SketchVideoModel& model, const fs::path& dataset, const EvalOptions& o) {
  if (!model.control) throw std::invalid_argument("evaluation needs a checkpoint with a sketch branch");
  DatasetLoader loader(dataset, SampleKind::Video, 0, o.holdout_fraction, true);
  const std::size_t n = std::min<std::size_t>(loader.size(), static_cast<std::size_t>(std::max(o.samples, 0)));
  if (n == 0) throw DataError("no held-out video samples to evaluate");
  GenerationReport report;
  std::vector<double> corpus_tc;
  for (std::size_t i = 0; i < n; ++i) {
    const StoredSample s = loader.at(i);
    std::mt19937_64 rng(mix(o.seed, i));
    KeyframeSketchSet set;
    set.time_points = sample_keyframes(s.clip.frames, o.keyframes, rng);
    for (int t : set.time_points) set.sketches.push_back(s.sketches.at(static_cast<std::size_t>(t)));

    GenerateRequest req;
    req.prompt = s.entry.prompt;
    req.frames = s.clip.frames;
    req.height = s.clip.height;
    req.width = s.clip.width;
    req.seed = mix(o.seed + 1, i);
    req.sampler = SamplerConfig{o.steps, o.cfg};
    GenerateRequest baseline_req = req;
    req.sketches = set;
    const VideoClip conditioned = generate_video(model, req);
    const VideoClip baseline = generate_video(model, baseline_req);

    SampleMetrics m;
    m.id = s.entry.id;
    m.keyframes = set.time_points;
    m.edge_f1 = keyframe_f1(set, conditioned);
    m.edge_f1_baseline = keyframe_f1(set, baseline);
    m.temporal_consistency = temporal_consistency(conditioned);
    report.samples.push_back(std::move(m));
    corpus_tc.push_back(temporal_consistency(s.clip));
  }
  std::vector<double> f1, base, tc;
  for (const auto& m : report.samples) {
    f1.push_back(m.edge_f1);
    base.push_back(m.edge_f1_baseline);
    tc.push_back(m.temporal_consistency);
  }
  report.edge_f1 = mean_of(f1);
  report.edge_f1_baseline = mean_of(base);
  report.temporal_consistency = mean_of(tc);
  report.corpus_temporal_consistency = mean_of(corpus_tc);
  return report;
}

nlohmann::json EditReport::json() const {
  nlohmann::json j{{"psnr_unedited", psnr_unedited}, {"edge_f1", edge_f1}};
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) arr.push_back({{"id", s.id}, {"psnr_unedited", s.psnr_unedited}, {"edge_f1", s.edge_f1}});
  return j;
}

EditReport evaluate_editing(const SketchVideoModel& model, const fs::path& dataset, const EditEvalOptions& o) {
  if (!model.is_editing()) throw std::invalid_argument("edit evaluation needs an editing checkpoint");
  DatasetLoader loader(dataset, SampleKind::Video, 0, o.holdout_fraction, true);
  const std::size_t n = std::min<std::size_t>(loader.size(), static_cast<std::size_t>(std::max(o.samples, 0)));
  if (n == 0) throw DataError("no held-out video samples to evaluate");
  EditReport report;
  std::vector<double> psnr, f1;
  for (std::size_t i = 0; i < n; ++i) {
    const StoredSample s = loader.at(i);
    std::mt19937_64 rng(mix(o.seed + 7, i));
    const MaskSpec spec = sample_edit_mask(rng, s.scene);
    KeyframeSketchSet set;
    set.time_points = sample_keyframes(s.clip.frames, 2, rng);
    for (int t : set.time_points) set.sketches.push_back(s.sketches.at(static_cast<std::size_t>(t)));

    EditRequest req;
    req.source = s.clip;
    req.prompt = s.entry.prompt;
    req.sketches = set;
    req.track = mask_rectangle_track(spec, s.clip.frames, s.clip.height, s.clip.width, scene_velocity(s.scene));
    req.sampler = SamplerConfig{o.steps, o.cfg};
    req.fusion = o.fusion;
    req.latent_fusion = o.latent_fusion;
    const EditResult out = edit_video(model, req);
    EditSampleMetrics m{s.entry.id, psnr_unedited(s.clip, out.video, req.track), keyframe_f1(set, out.video)};
    psnr.push_back(m.psnr_unedited);
    f1.push_back(m.edge_f1);
    report.samples.push_back(std::move(m));
  }
  report.psnr_unedited = mean_of(psnr);
  report.edge_f1 = mean_of(f1);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation harness

AblationVariant ablation_variant(const std::string& name) {
  AblationVariant v;
  v.name = name;
  if (name == "ours") return v;
  if (name == "temporal-concat") {
    v.control.propagation = Propagation::TemporalConcat;
    return v;
  }
  if (name == "sketch-kv") {
    v.control.propagation = Propagation::SketchKeyValue;
    return v;
  }
  if (name == "no-skip") {
    v.control.placement = ControlConfig::consecutive_placement(0, 5);
    return v;
  }
  if (name == "no-image") {
    v.use_image_stage = false;
    return v;
  }
  int a = 0, b = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "place-%d-%d%c", &a, &b, &tail) == 2 && b >= a) {
    v.control.placement = ControlConfig::consecutive_placement(a, b - a + 1);
    return v;
  }
  throw std::invalid_argument("unknown ablation variant '" + name + "'");
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string training_fingerprint(const TrainConfig& config) {
  nlohmann::json j = config;
  j.erase("dataset");
  j.erase("output");
  j.erase("init");
  j.erase("metrics_log");
  return sha256_hex(j.dump()).substr(0, 16);
}

AblationReport summarize(std::vector<AblationRun> runs, const std::vector<AblationVariant>& variants) {
  AblationReport r;
  r.runs = std::move(runs);
  for (const auto& v : variants) {
    std::vector<double> f1, base, tc;
    for (const auto& run : r.runs) {
      if (run.variant != v.name) continue;
      f1.push_back(run.report.edge_f1);
      base.push_back(run.report.edge_f1_baseline);
      tc.push_back(run.report.temporal_consistency);
    }
    if (f1.empty()) continue;
    r.summary.push_back({v.name, median(f1), median(base), median(tc)});
  }
  return r;
}

std::string AblationReport::csv() const {
  std::ostringstream os;
  os << "variant,seed,fingerprint,edge_f1,edge_f1_baseline,temporal_consistency,corpus_temporal_consistency\n";
  os << std::setprecision(17);
  for (const auto& run : runs) {
    os << run.variant << ',' << run.seed << ',' << run.fingerprint << ',' << run.report.edge_f1 << ','
       << run.report.edge_f1_baseline << ',' << run.report.temporal_consistency << ','
       << run.report.corpus_temporal_consistency << '\n';
  }
  return os.str();
}

std::string AblationReport::markdown() const {
  std::ostringstream os;
  os << "Edge-F1 (sketch fidelity substitute) and projected-feature temporal consistency; median over seeds.\n\n";
  os << "| variant | edge F1 | edge F1 without sketches | temporal consistency |\n|---|---:|---:|---:|\n";
  for (const auto& s : summary) {
    os << "| " << s.variant << " | " << fmt(s.edge_f1) << " | " << fmt(s.edge_f1_baseline) << " | "
       << fmt(s.temporal_consistency) << " |\n";
  }
  os << "\n| variant | seed | fingerprint | edge F1 | edge F1 without sketches | temporal consistency |\n"
        "|---|---:|---|---:|---:|---:|\n";
  for (const auto& run : runs) {
    os << "| " << run.variant << " | " << run.seed << " | " << run.fingerprint << " | " << fmt(run.report.edge_f1)
       << " | " << fmt(run.report.edge_f1_baseline) << " | " << fmt(run.report.temporal_consistency) << " |\n";
  }
  return os.str();
}

nlohmann::json AblationReport::json() const {
  nlohmann::json j;
  auto& s = j["summary"] = nlohmann::json::array();
  for (const auto& row : summary) {
    s.push_back({{"variant", row.variant},
                 {"edge_f1", row.edge_f1},
                 {"edge_f1_baseline", row.edge_f1_baseline},
                 {"temporal_consistency", row.temporal_consistency}});
  }
  auto& r = j["runs"] = nlohmann::json::array();
  for (const auto& run : runs) {
    r.push_back({{"variant", run.variant}, {"seed", run.seed}, {"fingerprint", run.fingerprint}, {"report", run.report.json()}});
  }
  return j;
}

AblationReport run_ablation(const AblationOptions& o, const AblationProgress& progress) {
  if (o.variants.empty() || o.seeds.empty()) throw std::invalid_argument("ablation needs variants and seeds");
  fs::create_directories(o.workdir);
  std::vector<AblationRun> runs;
  for (const auto& v : o.variants) {
    for (std::uint64_t seed : o.seeds) {
      TrainConfig cfg = o.train;
      cfg.task = "generation";
      cfg.dataset = o.dataset;
      cfg.init = o.backbone;
      cfg.seed = seed;
      cfg.control = v.control;
      cfg.use_image_stage = v.use_image_stage;
      cfg.metrics_log.clear();
      const std::string fp = training_fingerprint(cfg);
      cfg.output = o.workdir / (v.name + "_seed" + std::to_string(seed) + "_" + fp + ".ckpt");
      SketchVideoModel model;
      if (fs::exists(cfg.output)) {
        if (progress) progress("reusing " + cfg.output.string());
        model = load_checkpoint(cfg.output);
      } else {
        if (progress) progress("training " + v.name + " seed " + std::to_string(seed));
        model = run_training(cfg).model;
      }
      if (progress) progress("evaluating " + v.name + " seed " + std::to_string(seed));
      runs.push_back({v.name, seed, fp, evaluate_generation(model, o.dataset, o.eval)});
    }
  }
  return summarize(std::move(runs), o.variants);
}

// ---------------------------------------------------------------------------
// Attention visualisation

nlohmann::json attention_dump_json(const AttentionDump& dump) {
  nlohmann::json j{{"block", dump.block},
                   {"frame", dump.frame},
                   {"key_frames", dump.key_frames},
                   {"grid_h", dump.grid_h},
                   {"grid_w", dump.grid_w},
                   {"heads", dump.heads.size()}};
  auto& w = j["weights"] = nlohmann::json::array();
  for (const Mat& h : dump.heads) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      std::vector<double> row(h.cols());
      for (Eigen::Index c = 0; c < h.cols(); ++c) row[c] = h(r, c);
      rows.push_back(row);
    }
    w.push_back(std::move(rows));
  }
  return j;
}

AttentionDump clip_attention(const SketchVideoModel& model, const VideoClip& clip, const std::string& prompt,
                             const KeyframeSketchSet& sketches, int block, int frame, int timestep, std::uint64_t seed) {
  if (!model.control) throw std::invalid_argument("checkpoint has no sketch branch");
  model.schedule.check_timestep(timestep);
  if (frame < 0 || frame >= clip.frames) throw RangeError("query frame outside the clip");
  const Conditioning cond = make_conditioning(prompt, sketches, clip.frames, clip.height, clip.width);
  std::mt19937_64 rng(seed);
  const Mat x0 = to_model_space(codec::encode_video(clip).values);
  const Mat z = noise_latent(model.schedule, x0, gaussian(static_cast<int>(x0.rows()), static_cast<int>(x0.cols()), rng),
                             timestep);
  DenoiseInput in;
  in.noisy = &z;
  in.timestep = timestep;
  in.prompt = cond.prompt;
  in.layout = cond.layout;
  return dump_attention_maps(model.backbone, *model.control, in, *cond.sketches, block, codec::latent_frame_of(frame));
}

Mat attention_image(const AttentionDump& dump) {
  if (dump.heads.empty()) throw std::invalid_argument("attention dump without heads");
  Mat img = Mat::Zero(dump.heads.front().rows(), dump.heads.front().cols());
  for (const Mat& h : dump.heads) img += h;
  const double peak = img.maxCoeff();
  if (peak > 0) img /= peak;
  return img;
}

std::vector<fs::path> write_attention_dump(const fs::path& dir, const std::string& stem, const AttentionDump& dump) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  const int hw = dump.grid_h * dump.grid_w;
  for (std::size_t h = 0; h < dump.heads.size(); ++h) {
    for (std::size_t k = 0; k < dump.key_frames.size(); ++k) {
      // Rows are query cells, columns key cells of one key frame; scaled to the block maximum.
      Mat img = dump.heads[h].block(0, static_cast<Eigen::Index>(k) * hw, hw, hw);
      const double peak = img.maxCoeff();
      if (peak > 0) img /= peak;
      const fs::path p = dir / (stem + "_h" + std::to_string(h) + "_k" + std::to_string(k) + ".png");
      write_png_gray(p, img);
      out.push_back(p);
    }
  }
  const fs::path js = dir / (stem + ".json");
  std::ofstream f(js);
  if (!f) throw DataError("cannot write " + js.string());
  f << attention_dump_json(dump).dump(2) << '\n';
  out.push_back(js);
  return out;
}

}  // namespace sketchdit
