#include "sketchdit/checkpoint.hpp"
#include "sketchdit/codec.hpp"
#include "sketchdit/data.hpp"
#include "sketchdit/errors.hpp"
#include "sketchdit/eval.hpp"
#include "sketchdit/pipeline.hpp"
#include "sketchdit/service.hpp"
#include "sketchdit/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchdit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitRuntime = 4;

// Argument problems found after CLI11 has parsed.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s, const char* what) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || used == 0) throw UsageError(std::string("bad ") + what + " value '" + item + "'");
    out.push_back(v);
  }
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::optional<KeyframeSketchSet> sketch_set(const std::string& sketches, const std::string& at) {
  const auto paths = split_list(sketches);
  if (paths.empty()) return std::nullopt;
  if (paths.size() > static_cast<std::size_t>(kMaxSketchesPerRequest))
    throw UsageError("at most " + std::to_string(kMaxSketchesPerRequest) + " keyframe sketches (got " +
                     std::to_string(paths.size()) + ")");
  const auto times = parse_ints(at, "--at");
  if (times.size() != paths.size()) throw UsageError("--at needs one time point per --sketch");
  KeyframeSketchSet set;
  for (const auto& p : paths) set.sketches.push_back(sketch_from_png(read_png(p)));
  set.time_points = times;
  return set;
}

// Flow masks follow the scene's objects; the dataset keeps scene.json next to frames/.
VelocityProvider velocity_for(const fs::path& video, const std::string& scene) {
  fs::path p = scene;
  if (p.empty()) {
    for (const fs::path& c : {video / "scene.json", video.parent_path() / "scene.json"}) {
      if (fs::exists(c)) {
        p = c;
        break;
      }
    }
  }
  if (p.empty()) return {};
  return scene_velocity(read_json(p).get<SceneSpec>());
}

ProgressFn progress_printer(int every) {
  return [every](const TrainProgress& p) {
    if (every > 0 && p.step % every == 0)
      std::cerr << to_string(p.stage) << " step " << p.step << " loss " << p.loss << " lr " << p.lr << "\n";
  };
}

// Clip size the backbone was trained on.
GenerateRequest request_for(const SketchVideoModel& model) {
  const BackboneConfig& bb = model.backbone.config;
  GenerateRequest req;
  req.frames = (bb.latent_frames - 1) * codec::kTemporal + 1;
  req.height = bb.grid_h * codec::kSpatial;
  req.width = bb.grid_w * codec::kSpatial;
  return req;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct Cli {
  CLI::App app{"Sketch-conditioned video generation and editing on a toy diffusion transformer", "sketchdit"};

  // dataset gen
  std::uint64_t ds_seed = 0;
  int ds_count = 2000;
  int ds_images = -1;
  std::string ds_out;

  // train
  std::string train_task, train_config, train_output, train_init, train_dataset;
  int train_log_every = 100;

  // sample / edit / dump-attn share these
  std::string ckpt, prompt, sketch, at, out;
  std::uint64_t seed = 0;
  int steps = 50;
  double cfg = 10.0;
  double edit_cfg = 20.0;
  std::string video, mask, scene;
  bool no_fusion = false;
  bool pixel_blend_flag = false;
  std::string fusion_steps;
  int block = 0, frame = 0, timestep = 500;

  // eval / ablate
  std::string suite = "gen", data, report;
  int samples = 16;
  std::string variants_file, backbone_ckpt, workdir;

  // serve
  std::string edit_ckpt, store, addr = "127.0.0.1:8080";
  int workers = 1;
  std::size_t queue = 8;

  // cost
  std::string preset = "toy", format = "md";

  CLI::App *ds_gen, *train, *sample, *edit, *eval, *ablate, *dump, *serve, *cost;

  Cli() {
    app.require_subcommand(1);

    auto* ds = app.add_subcommand("dataset", "Synthetic corpus");
    ds->require_subcommand(1);
    ds_gen = ds->add_subcommand("gen", "Render videos, images, sketches and the index");
    ds_gen->add_option("--seed", ds_seed, "Corpus seed");
    ds_gen->add_option("--count", ds_count, "Number of video samples")->check(CLI::NonNegativeNumber);
    ds_gen->add_option("--images", ds_images, "Number of image samples (default 2 x count)");
    ds_gen->add_option("--out", ds_out, "Output directory")->required();

    train = app.add_subcommand("train", "Train one stage and write a checkpoint");
    train->add_option("task", train_task, "backbone | generation | editing (default: the config's task)")
        ->check(CLI::IsMember({"backbone", "generation", "editing"}));
    train->add_option("--config", train_config, "Training config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--output", train_output, "Override the output checkpoint");
    train->add_option("--init", train_init, "Override the initial checkpoint");
    train->add_option("--dataset", train_dataset, "Override the dataset directory");
    train->add_option("--log-every", train_log_every, "Progress line interval (0 silences)");

    sample = app.add_subcommand("sample", "Generate a sketch-conditioned clip");
    sample->add_option("--ckpt", ckpt, "Generation checkpoint")->required();
    sample->add_option("--prompt", prompt, "Text prompt")->required();
    sample->add_option("--sketch", sketch, "Keyframe sketch PNG[,PNG]")->required();
    sample->add_option("--at", at, "Frame index per sketch t1[,t2]")->required();
    sample->add_option("--seed", seed);
    sample->add_option("--steps", steps)->check(CLI::PositiveNumber);
    sample->add_option("--cfg", cfg, "Guidance scale");
    sample->add_option("--out", out, "Frame directory")->required();

    edit = app.add_subcommand("edit", "Redraw a masked region of a clip");
    edit->add_option("--ckpt", ckpt, "Editing checkpoint")->required();
    edit->add_option("--video", video, "Source frame directory")->required()->check(CLI::ExistingDirectory);
    edit->add_option("--prompt", prompt, "Text prompt");
    edit->add_option("--sketch", sketch, "Keyframe sketch PNG[,PNG]")->required();
    edit->add_option("--at", at, "Frame index per sketch t1[,t2]")->required();
    edit->add_option("--mask", mask, "MaskSpec JSON")->required()->check(CLI::ExistingFile);
    edit->add_option("--scene", scene, "Scene JSON for flow masks");
    edit->add_option("--steps", steps)->check(CLI::PositiveNumber);
    edit->add_option("--cfg", edit_cfg, "Guidance scale");
    edit->add_option("--fusion-steps", fusion_steps, "0-based steps replacing unedited latents (default 25,49)");
    edit->add_flag("--no-fusion", no_fusion, "Disable latent fusion");
    edit->add_flag("--pixel-blend", pixel_blend_flag, "Copy unedited pixels from the source after decoding");
    edit->add_option("--out", out, "Frame directory")->required();

    eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out clips");
    eval->add_option("--ckpt", ckpt)->required();
    eval->add_option("--suite", suite)->check(CLI::IsMember({"gen", "edit"}));
    eval->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--samples", samples)->check(CLI::PositiveNumber);
    eval->add_option("--steps", steps)->check(CLI::PositiveNumber);
    eval->add_option("--cfg", cfg);
    eval->add_option("--seed", seed);
    eval->add_option("--report", report, "Write the JSON report here");

    ablate = app.add_subcommand("ablate", "Train and evaluate control-branch variants");
    ablate->add_option("--variants", variants_file, "Ablation JSON")->required()->check(CLI::ExistingFile);
    ablate->add_option("--data", data, "Dataset directory (overrides the file)");
    ablate->add_option("--backbone", backbone_ckpt, "Backbone checkpoint (overrides the file)");
    ablate->add_option("--workdir", workdir, "Run directory (overrides the file)");
    ablate->add_option("--report", report, "Report prefix; writes .csv, .md and .json");

    dump = app.add_subcommand("dump-attn", "Inter-frame attention maps as PNGs");
    dump->add_option("--ckpt", ckpt)->required();
    dump->add_option("--prompt", prompt)->required();
    dump->add_option("--sketch", sketch)->required();
    dump->add_option("--at", at)->required();
    dump->add_option("--video", video, "Clip to probe (default: sample one first)");
    dump->add_option("--block", block, "Control block index")->required();
    dump->add_option("--frame", frame, "Query frame (pixel index)")->required();
    dump->add_option("--timestep", timestep);
    dump->add_option("--seed", seed);
    dump->add_option("--steps", steps)->check(CLI::PositiveNumber);
    dump->add_option("--cfg", cfg);
    dump->add_option("--out", out)->required();

    serve = app.add_subcommand("serve", "HTTP inference service");
    serve->add_option("--ckpt", ckpt, "Generation checkpoint (env SKETCHDIT_CKPT)");
    serve->add_option("--edit-ckpt", edit_ckpt, "Editing checkpoint");
    serve->add_option("--store", store, "Asset and job store (env SKETCHDIT_STORE)");
    serve->add_option("--addr", addr, "HOST:PORT");
    serve->add_option("--workers", workers)->check(CLI::NonNegativeNumber);
    serve->add_option("--queue", queue)->check(CLI::PositiveNumber);

    cost = app.add_subcommand("cost", "Parameter and FLOP table");
    cost->add_option("--preset", preset)->check(CLI::IsMember({"toy", "paper"}));
    cost->add_option("--format", format)->check(CLI::IsMember({"md", "csv", "json"}));
  }

  int run_dataset() {
    DatasetOptions o;
    o.seed = ds_seed;
    o.videos = ds_count;
    o.images = ds_images < 0 ? 2 * ds_count : ds_images;
    const DatasetIndex idx = write_dataset(ds_out, o);
    std::cout << "wrote " << idx.samples.size() << " samples to " << ds_out << "\n";
    return kExitOk;
  }

  int run_train() {
    TrainConfig c = load_train_config(train_config);
    if (!train_task.empty()) c.task = train_task;
    if (c.task.empty()) throw UsageError("no task (set \"task\" or pass it positionally)");
    if (!train_output.empty()) c.output = train_output;
    if (!train_init.empty()) c.init = train_init;
    if (!train_dataset.empty()) c.dataset = train_dataset;
    if (c.output.empty()) throw UsageError("no output checkpoint (set \"output\" or --output)");
    const TrainResult r = run_training(c, progress_printer(train_log_every));
    std::cout << "wrote " << c.output.string() << " (" << r.losses.size() << " steps";
    if (!r.losses.empty()) std::cout << ", final loss " << r.losses.back();
    std::cout << ")\n";
    if (!r.backbone_hash_before.empty() && r.backbone_hash_before != r.backbone_hash_after)
      std::cerr << "warning: backbone weights changed during training\n";
    return kExitOk;
  }

  int run_sample() {
    const SketchVideoModel model = load_checkpoint(ckpt);
    GenerateRequest req = request_for(model);
    req.prompt = prompt;
    req.sketches = sketch_set(sketch, at);
    req.seed = seed;
    req.sampler = SamplerConfig{steps, cfg};
    write_frame_directory(out, generate_video(model, req));
    std::cout << "wrote " << req.frames << " frames to " << out << "\n";
    return kExitOk;
  }

  int run_edit() {
    const SketchVideoModel model = load_checkpoint(ckpt);
    EditRequest req;
    req.source = read_frame_directory(video);
    req.prompt = prompt;
    req.sketches = sketch_set(sketch, at);
    const MaskSpec spec = mask_spec_from_json(read_json(mask));
    req.track = mask_rectangle_track(spec, req.source.frames, req.source.height, req.source.width,
                                     spec.movement == Movement::Flow ? velocity_for(video, scene) : VelocityProvider{});
    req.sampler = SamplerConfig{steps, edit_cfg};
    req.inversion.steps = steps;
    req.latent_fusion = !no_fusion;
    if (!fusion_steps.empty()) req.fusion.steps = parse_ints(fusion_steps, "--fusion-steps");
    if (req.latent_fusion) req.fusion.validate(steps);
    VideoClip result = edit_video(model, req).video;
    if (pixel_blend_flag) result = pixel_blend(req.source, result, req.track);
    write_frame_directory(out, result);
    std::cout << "wrote " << result.frames << " frames to " << out << "\n";
    return kExitOk;
  }

  int run_eval() {
    const SketchVideoModel model = load_checkpoint(ckpt);
    json j;
    if (suite == "gen") {
      EvalOptions o;
      o.samples = samples;
      o.steps = steps;
      o.cfg = cfg;
      o.seed = seed;
      const GenerationReport r = evaluate_generation(model, data, o);
      j = r.json();
      std::cout << "edge_f1 " << r.edge_f1 << " baseline " << r.edge_f1_baseline << " temporal_consistency "
                << r.temporal_consistency << " corpus " << r.corpus_temporal_consistency << "\n";
    } else {
      EditEvalOptions o;
      o.samples = samples;
      o.steps = steps;
      if (!eval->get_option("--cfg")->empty()) o.cfg = cfg;
      o.seed = seed;
      const EditReport r = evaluate_editing(model, data, o);
      j = r.json();
      std::cout << "psnr_unedited " << r.psnr_unedited << " edge_f1 " << r.edge_f1 << "\n";
    }
    if (!report.empty()) write_text(report, j.dump(2) + "\n");
    return kExitOk;
  }

  // {"variants": [...names], "seeds": [...], "dataset", "backbone", "workdir",
  //  "train": TrainConfig fields, "eval": {samples, steps, cfg, seed}}
  int run_ablate() {
    const json j = read_json(variants_file);
    AblationOptions o;
    const json names = j.is_array() ? j : j.value("variants", json::array());
    if (names.empty()) throw UsageError("ablation file lists no variants");
    for (const auto& n : names) o.variants.push_back(ablation_variant(n.get<std::string>()));
    if (j.is_object()) {
      if (j.contains("seeds")) o.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      o.dataset = j.value("dataset", "");
      o.backbone = j.value("backbone", "");
      o.workdir = j.value("workdir", "");
      if (j.contains("train")) o.train = j.at("train").get<TrainConfig>();
      if (j.contains("eval")) {
        const json& e = j.at("eval");
        o.eval.samples = e.value("samples", o.eval.samples);
        o.eval.steps = e.value("steps", o.eval.steps);
        o.eval.cfg = e.value("cfg", o.eval.cfg);
        o.eval.seed = e.value("seed", o.eval.seed);
      }
    }
    if (!data.empty()) o.dataset = data;
    if (!backbone_ckpt.empty()) o.backbone = backbone_ckpt;
    if (!workdir.empty()) o.workdir = workdir;
    if (o.dataset.empty() || o.backbone.empty() || o.workdir.empty())
      throw UsageError("ablation needs a dataset, a backbone checkpoint and a workdir");
    const AblationReport r = run_ablation(o, [](const std::string& m) { std::cerr << m << "\n"; });
    std::cout << r.markdown();
    if (!report.empty()) {
      write_text(report + ".csv", r.csv());
      write_text(report + ".md", r.markdown());
      write_text(report + ".json", r.json().dump(2) + "\n");
    }
    return kExitOk;
  }

  int run_dump() {
    const SketchVideoModel model = load_checkpoint(ckpt);
    if (!model.control) throw CheckpointError(ckpt + " has no sketch branch");
    const auto set = sketch_set(sketch, at);
    VideoClip clip;
    if (!video.empty()) {
      clip = read_frame_directory(video);
    } else {
      GenerateRequest req = request_for(model);
      req.prompt = prompt;
      req.sketches = set;
      req.seed = seed;
      req.sampler = SamplerConfig{steps, cfg};
      clip = generate_video(model, req);
      write_frame_directory(fs::path(out) / "frames", clip);
    }
    const AttentionDump d = clip_attention(model, clip, prompt, *set, block, frame, timestep, seed);
    const auto paths = write_attention_dump(out, "attn_b" + std::to_string(block) + "_f" + std::to_string(frame), d);
    write_png_gray(fs::path(out) / "attn_mean.png", attention_image(d));
    std::cout << "wrote " << paths.size() + 1 << " files to " << out << "\n";
    return kExitOk;
  }

  int run_serve() {
    ServiceOptions o;
    o.checkpoint = env_or("SKETCHDIT_CKPT", ckpt);
    o.store = env_or("SKETCHDIT_STORE", store);
    o.edit_checkpoint = edit_ckpt;
    o.workers = workers;
    o.queue_capacity = queue;
    if (o.checkpoint.empty()) throw UsageError("serve needs --ckpt or SKETCHDIT_CKPT");
    if (o.store.empty()) throw UsageError("serve needs --store or SKETCHDIT_STORE");
    const auto [host, port] = parse_address(addr);
    InferenceService service(o);
    HttpServer server(service);
    const int bound = server.bind(host, port);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << host << ":" << bound << "\n";
    server.listen();
    g_server = nullptr;
    return kExitOk;
  }

  int run_cost() {
    const BackboneConfig bb = preset == "paper" ? BackboneConfig::paper_scale() : BackboneConfig::toy();
    ControlConfig cc;
    cc.placement = ControlConfig::uniform_placement(bb.blocks, 5);
    const CostTable t = cost_table(bb, cc);
    if (format == "csv") {
      std::cout << t.csv();
    } else if (format == "json") {
      json rows = json::array();
      for (const auto& r : t.rows)
        rows.push_back({{"name", r.name},
                        {"parameters", r.parameters},
                        {"branch_parameters", r.branch_parameters},
                        {"flops", r.flops},
                        {"branch_flops", r.branch_flops}});
      std::cout << json{{"rows", rows}, {"copy_ratio", t.copy_ratio}}.dump(2) << "\n";
    } else {
      std::cout << t.markdown();
    }
    return kExitOk;
  }

  int dispatch() {
    if (*ds_gen) return run_dataset();
    if (*train) return run_train();
    if (*sample) return run_sample();
    if (*edit) return run_edit();
    if (*eval) return run_eval();
    if (*ablate) return run_ablate();
    if (*dump) return run_dump();
    if (*serve) return run_serve();
    if (*cost) return run_cost();
    return kExitUsage;
  }
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &cli.app;
    for (const CLI::App* sub : cli.app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return kExitUsage;
  }
  try {
    return cli.dispatch();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::logic_error& e) {
    // ShapeError and RangeError: inputs that do not fit the model
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
