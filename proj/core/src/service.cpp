#include "sketchdit/service.hpp"

#include "sketchdit/checkpoint.hpp"
#include "sketchdit/codec.hpp"
#include "sketchdit/data.hpp"
#include "sketchdit/errors.hpp"
#include "sketchdit/eval.hpp"
#include "sketchdit/pipeline.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchdit {

namespace {

double now_ms() {
  using namespace std::chrono;
  return static_cast<double>(duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

// 400 with a message; thrown from request validation.
struct BadRequest : std::runtime_error {
  int status;
  BadRequest(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

void require(bool ok, const std::string& message, int status = 400) {
  if (!ok) throw BadRequest(status, message);
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, p);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) || c == '-'; });
}

void check_keys(const json& body, std::initializer_list<const char*> allowed) {
  require(body.is_object(), "request body must be a JSON object");
  for (const auto& [key, _] : body.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    require(known, "unknown field '" + key + "'");
  }
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw BadRequest(400, std::string("malformed JSON: ") + e.what());
  }
}

struct SketchRef {
  std::string asset_id;
  int at = 0;
};

std::vector<SketchRef> parse_sketches(const json& body) {
  std::vector<SketchRef> refs;
  if (!body.contains("sketches")) return refs;
  const json& s = body.at("sketches");
  require(s.is_array(), "'sketches' must be an array");
  require(s.size() <= static_cast<std::size_t>(kMaxSketchesPerRequest),
          "at most " + std::to_string(kMaxSketchesPerRequest) + " keyframe sketches per request (got " +
              std::to_string(s.size()) + ")",
          409);
  for (const auto& e : s) {
    require(e.is_object() && e.size() == 2 && e.contains("asset_id") && e.contains("at"),
            "each sketch is {asset_id, at}");
    require(e.at("asset_id").is_string(), "'asset_id' must be a string");
    require(e.at("at").is_number_integer(), "'at' must be an integer frame index");
    refs.push_back({e.at("asset_id").get<std::string>(), e.at("at").get<int>()});
  }
  return refs;
}

std::uint64_t parse_seed(const json& body, std::mt19937_64& rng) {
  if (!body.contains("seed")) return rng() >> 11;  // fits a JSON double exactly
  require(body.at("seed").is_number_unsigned(), "'seed' must be a non-negative integer");
  return body.at("seed").get<std::uint64_t>();
}

int parse_steps(const json& body) {
  if (!body.contains("steps")) return 50;
  require(body.at("steps").is_number_integer(), "'steps' must be an integer");
  const int steps = body.at("steps").get<int>();
  require(steps >= 1 && steps <= 1000, "'steps' must be in [1, 1000]");
  return steps;
}

double parse_cfg(const json& body, double fallback) {
  if (!body.contains("cfg")) return fallback;
  require(body.at("cfg").is_number(), "'cfg' must be a number");
  const double cfg = body.at("cfg").get<double>();
  require(cfg >= 1.0 && cfg <= 100.0, "'cfg' must be in [1, 100]");
  return cfg;
}

std::string parse_prompt(const json& body) {
  require(body.contains("prompt") && body.at("prompt").is_string(), "'prompt' must be a string");
  return body.at("prompt").get<std::string>();
}

}  // namespace

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "failed";
}

JobStatus job_status_from_string(const std::string& s) {
  if (s == "queued") return JobStatus::Queued;
  if (s == "running") return JobStatus::Running;
  if (s == "done") return JobStatus::Done;
  if (s == "failed") return JobStatus::Failed;
  throw DataError("unknown job status '" + s + "'");
}

json JobRecord::json() const {
  nlohmann::json j{{"id", id},
                   {"kind", kind},
                   {"status", to_string(status)},
                   {"request", request},
                   {"frames", frames},
                   {"seed", seed},
                   {"timings", {{"created_ms", created_ms}, {"started_ms", started_ms}, {"finished_ms", finished_ms}}}};
  if (!error.empty()) j["error"] = error;
  return j;
}

JobRecord JobRecord::from_json(const nlohmann::json& j) {
  JobRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.status = job_status_from_string(j.at("status").get<std::string>());
  r.request = j.at("request");
  r.frames = j.at("frames").get<std::vector<std::string>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto& t = j.at("timings");
  r.created_ms = t.at("created_ms").get<double>();
  r.started_ms = t.at("started_ms").get<double>();
  r.finished_ms = t.at("finished_ms").get<double>();
  r.error = j.value("error", std::string());
  return r;
}

ApiResponse ApiResponse::json(int status, const nlohmann::json& body) {
  return ApiResponse{status, "application/json", body.dump()};
}

ApiResponse ApiResponse::error(int status, const std::string& message) {
  return json(status, nlohmann::json{{"error", message}, {"status", status}});
}

// ---------------------------------------------------------------------------

InferenceService::InferenceService(ServiceOptions options, std::shared_ptr<const SketchVideoModel> generator,
                                   std::shared_ptr<const SketchVideoModel> editor)
    : options_(std::move(options)), generator_(std::move(generator)), editor_(std::move(editor)) {
  init();
}

InferenceService::InferenceService(ServiceOptions options) : options_(std::move(options)) {
  generator_ = std::make_shared<const SketchVideoModel>(load_checkpoint(options_.checkpoint));
  if (!options_.edit_checkpoint.empty()) {
    editor_ = std::make_shared<const SketchVideoModel>(load_checkpoint(options_.edit_checkpoint));
  }
  init();
}

void InferenceService::init() {
  if (!generator_) throw CheckpointError("the service needs a generation checkpoint");
  if (generator_->is_editing()) throw CheckpointError("--ckpt must be a generation checkpoint");
  if (editor_ && !editor_->is_editing()) throw CheckpointError("the edit checkpoint has no video insertion branch");
  if (options_.store.empty()) throw std::invalid_argument("the service needs a store directory");
  if (options_.queue_capacity == 0) throw std::invalid_argument("queue capacity must be positive");
  const BackboneConfig& bb = generator_->backbone.config;
  frames_ = (bb.latent_frames - 1) * codec::kTemporal + 1;
  height_ = bb.grid_h * codec::kSpatial;
  width_ = bb.grid_w * codec::kSpatial;
  fs::create_directories(options_.store / "assets");
  fs::create_directories(options_.store / "jobs");
  id_rng_.seed(std::random_device{}());
  load_store();
  for (int i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

InferenceService::~InferenceService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  work_ready_.notify_all();
  for (auto& w : workers_) w.join();
}

void InferenceService::load_store() {
  for (const auto& entry : fs::directory_iterator(options_.store / "jobs")) {
    const fs::path p = entry.path() / "job.json";
    if (!fs::exists(p)) continue;
    JobRecord r = JobRecord::from_json(json::parse(read_bytes(p)));
    if (r.status == JobStatus::Queued || r.status == JobStatus::Running) {
      r.status = JobStatus::Failed;
      r.error = "interrupted by a service restart";
      r.finished_ms = now_ms();
      persist(r);
    }
    jobs_.emplace(r.id, std::move(r));
  }
}

fs::path InferenceService::job_dir(const std::string& id) const { return options_.store / "jobs" / id; }
fs::path InferenceService::asset_dir(const std::string& id) const { return options_.store / "assets" / id; }

std::string InferenceService::new_id() {
  std::lock_guard lock(mu_);
  const std::uint64_t a = id_rng_(), b = id_rng_();
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08x-%04x-4%03x-%04x-%012llx", static_cast<unsigned>(a >> 32),
                static_cast<unsigned>((a >> 16) & 0xffff), static_cast<unsigned>(a & 0xfff),
                static_cast<unsigned>(0x8000 | ((b >> 48) & 0x3fff)),
                static_cast<unsigned long long>(b & 0xffffffffffffULL));
  return buf;
}

void InferenceService::persist(const JobRecord& r) const {
  fs::create_directories(job_dir(r.id));
  write_text(job_dir(r.id) / "job.json", r.json().dump(2));
}

std::optional<std::vector<fs::path>> InferenceService::asset_frames(const std::string& id) const {
  if (!valid_id(id)) return std::nullopt;
  const fs::path dir = asset_dir(id);
  std::vector<fs::path> out;
  if (fs::exists(dir / "asset.json")) {
    const json meta = json::parse(read_bytes(dir / "asset.json"));
    const int n = meta.at("count").get<int>();
    for (int i = 0; i < n; ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "%05d.png", i);
      out.push_back(dir / name);
    }
    return out;
  }
  // Finished generate/edit jobs double as frame assets, so results chain into edits.
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.status != JobStatus::Done) return std::nullopt;
  for (const auto& f : it->second.frames) out.push_back(job_dir(id) / f);
  return out;
}

ApiResponse InferenceService::post_asset(const std::vector<std::string>& pngs) {
  if (pngs.empty()) return ApiResponse::error(400, "no PNG in the upload");
  std::vector<PngImage> images;
  try {
    for (const auto& p : pngs) images.push_back(decode_png(std::vector<std::uint8_t>(p.begin(), p.end())));
  } catch (const std::exception& e) {
    return ApiResponse::error(400, std::string("not a PNG: ") + e.what());
  }
  for (const auto& img : images) {
    if (img.height != height_ || img.width != width_) {
      return ApiResponse::error(400, "PNG must be " + std::to_string(width_) + "x" + std::to_string(height_));
    }
  }
  const std::string id = new_id();
  const fs::path dir = asset_dir(id);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < pngs.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    std::ofstream f(dir / name, std::ios::binary);
    f.write(pngs[i].data(), static_cast<std::streamsize>(pngs[i].size()));
  }
  const json meta{{"asset_id", id}, {"kind", pngs.size() == 1 ? "image" : "frames"}, {"count", pngs.size()}};
  write_text(dir / "asset.json", meta.dump());
  return ApiResponse::json(201, meta);
}

ApiResponse InferenceService::enqueue(const std::string& kind, json request, json work, std::uint64_t seed) {
  const std::string id = new_id();
  std::lock_guard lock(mu_);
  if (queue_.size() >= options_.queue_capacity) {
    return ApiResponse::error(503, "job queue is full (" + std::to_string(options_.queue_capacity) + " pending)");
  }
  JobRecord r;
  r.id = id;
  r.kind = kind;
  r.request = std::move(request);
  r.seed = seed;
  r.created_ms = now_ms();
  persist(r);
  jobs_.emplace(id, r);
  queue_.push_back({id, std::move(work)});
  work_ready_.notify_one();
  changed_.notify_all();
  return ApiResponse::json(202, json{{"job_id", id}, {"status", "queued"}});
}

ApiResponse InferenceService::post_generate(const std::string& body) {
  try {
    const json req = parse_body(body);
    check_keys(req, {"prompt", "sketches", "seed", "steps", "cfg"});
    const std::vector<SketchRef> refs = parse_sketches(req);
    const std::string prompt = parse_prompt(req);
    const int steps = parse_steps(req);
    const double cfg = parse_cfg(req, 10.0);
    std::uint64_t seed;
    {
      std::lock_guard lock(mu_);
      seed = parse_seed(req, id_rng_);
    }
    json work{{"prompt", prompt}, {"steps", steps}, {"cfg", cfg}, {"seed", seed}, {"sketches", json::array()}};
    KeyframeSketchSet set;
    for (const auto& ref : refs) {
      const auto frames = asset_frames(ref.asset_id);
      require(frames.has_value(), "unknown asset " + ref.asset_id, 404);
      require(frames->size() == 1, "sketch asset " + ref.asset_id + " holds more than one image");
      work["sketches"].push_back({{"path", frames->front().string()}, {"at", ref.at}});
      set.time_points.push_back(ref.at);
      set.sketches.emplace_back(height_, width_);
    }
    if (!refs.empty()) {
      require(generator_->control.has_value(), "the checkpoint has no sketch branch");
      try {
        (void)resolve_sketches(set, frames_, height_, width_);
      } catch (const std::exception& e) {
        throw BadRequest(400, e.what());
      }
    }
    return enqueue("generate", req, std::move(work), seed);
  } catch (const BadRequest& e) {
    return ApiResponse::error(e.status, e.what());
  }
}

ApiResponse InferenceService::post_edit(const std::string& body) {
  try {
    const json req = parse_body(body);
    check_keys(req, {"video_asset", "prompt", "sketches", "mask", "seed", "steps", "cfg"});
    const std::vector<SketchRef> refs = parse_sketches(req);
    if (!editor_) return ApiResponse::error(501, "the service was started without an editing checkpoint");
    const std::string prompt = parse_prompt(req);
    require(req.contains("video_asset") && req.at("video_asset").is_string(), "'video_asset' must be a string");
    require(req.contains("mask"), "'mask' is required");
    MaskSpec mask;
    try {
      mask = mask_spec_from_json(req.at("mask"));
    } catch (const std::exception& e) {
      throw BadRequest(400, std::string("invalid mask: ") + e.what());
    }
    const int steps = parse_steps(req);
    const double cfg = parse_cfg(req, 20.0);
    std::uint64_t seed;
    {
      std::lock_guard lock(mu_);
      seed = parse_seed(req, id_rng_);
    }
    const std::string video_id = req.at("video_asset").get<std::string>();
    const auto video = asset_frames(video_id);
    require(video.has_value(), "unknown asset " + video_id, 404);
    require(static_cast<int>(video->size()) == frames_,
            "video asset must hold " + std::to_string(frames_) + " frames (got " + std::to_string(video->size()) + ")");
    require(mask.last_frame < frames_, "mask frames exceed the clip");
    fs::path scene;
    if (mask.movement == Movement::Flow) {
      scene = asset_dir(video_id) / "scene.json";
      require(fs::exists(scene), "flow movement needs scene metadata uploaded with the video asset");
    }
    json work{{"prompt", prompt},  {"steps", steps},           {"cfg", cfg},           {"seed", seed},
              {"video", json::array()}, {"mask", mask_spec_to_json(mask)}, {"scene", scene.string()},
              {"sketches", json::array()}};
    for (const auto& p : *video) work["video"].push_back(p.string());
    KeyframeSketchSet set;
    for (const auto& ref : refs) {
      const auto frames = asset_frames(ref.asset_id);
      require(frames.has_value(), "unknown asset " + ref.asset_id, 404);
      require(frames->size() == 1, "sketch asset " + ref.asset_id + " holds more than one image");
      work["sketches"].push_back({{"path", frames->front().string()}, {"at", ref.at}});
      set.time_points.push_back(ref.at);
      set.sketches.emplace_back(height_, width_);
    }
    if (!refs.empty()) {
      try {
        (void)resolve_sketches(set, frames_, height_, width_);
      } catch (const std::exception& e) {
        throw BadRequest(400, e.what());
      }
    }
    return enqueue("edit", req, std::move(work), seed);
  } catch (const BadRequest& e) {
    return ApiResponse::error(e.status, e.what());
  }
}

std::optional<JobRecord> InferenceService::job(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::optional<JobRecord> InferenceService::wait(const std::string& id, double timeout_seconds) const {
  std::unique_lock lock(mu_);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  changed_.wait_until(lock, deadline, [&] {
    const auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed;
  });
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

ApiResponse InferenceService::get_job(const std::string& id) const {
  const auto r = job(id);
  if (!r) return ApiResponse::error(404, "unknown job " + id);
  return ApiResponse::json(200, r->json());
}

ApiResponse InferenceService::get_frame(const std::string& id, int n) const {
  const auto r = job(id);
  if (!r) return ApiResponse::error(404, "unknown job " + id);
  if (r->status != JobStatus::Done) return ApiResponse::error(409, "job " + id + " is " + to_string(r->status));
  if (n < 0 || n >= static_cast<int>(r->frames.size())) return ApiResponse::error(404, "no frame " + std::to_string(n));
  return ApiResponse{200, "image/png", read_bytes(job_dir(id) / r->frames[static_cast<std::size_t>(n)])};
}

ApiResponse InferenceService::get_attention(const std::string& id, std::optional<int> block,
                                            std::optional<int> frame) const {
  const auto r = job(id);
  if (!r) return ApiResponse::error(404, "unknown job " + id);
  if (r->status != JobStatus::Done) return ApiResponse::error(409, "job " + id + " is " + to_string(r->status));
  if (r->kind != "generate") return ApiResponse::error(400, "attention maps are available for generate jobs");
  const json& req = r->request;
  if (!req.contains("sketches") || req.at("sketches").empty()) {
    return ApiResponse::error(400, "job was not sketch-conditioned");
  }
  const SketchVideoModel& model = *generator_;
  const int b = block.value_or(model.control->blocks.front().backbone_block);
  const int f = frame.value_or(0);
  try {
    std::vector<PngImage> pngs;
    for (const auto& name : r->frames) pngs.push_back(read_png(job_dir(id) / name));
    const VideoClip clip = clip_from_pngs(pngs);
    KeyframeSketchSet set;
    const fs::path dir = job_dir(id);
    for (std::size_t i = 0; i < req.at("sketches").size(); ++i) {
      set.time_points.push_back(req.at("sketches")[i].at("at").get<int>());
      set.sketches.push_back(sketch_from_png(read_png(dir / ("sketch_" + std::to_string(i) + ".png"))));
    }
    const AttentionDump dump =
        clip_attention(model, clip, req.at("prompt").get<std::string>(), set, b, f, options_.attention_timestep, r->seed);
    const Mat img = attention_image(dump);
    const fs::path tmp = dir / ("attn_" + std::to_string(b) + "_" + std::to_string(f) + ".png");
    write_png_gray(tmp, img);
    return ApiResponse{200, "image/png", read_bytes(tmp)};
  } catch (const RangeError& e) {
    return ApiResponse::error(400, e.what());
  }
}

void InferenceService::worker_loop() {
  for (;;) {
    Pending p;
    {
      std::unique_lock lock(mu_);
      work_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      p = std::move(queue_.front());
      queue_.pop_front();
      JobRecord& r = jobs_.at(p.id);
      r.status = JobStatus::Running;
      r.started_ms = now_ms();
      persist(r);
    }
    changed_.notify_all();
    std::string error;
    try {
      run_job(p);
    } catch (const std::exception& e) {
      error = e.what();
    }
    {
      std::lock_guard lock(mu_);
      JobRecord& r = jobs_.at(p.id);
      if (error.empty()) {
        r.status = JobStatus::Done;
        for (int t = 0; t < frames_; ++t) {
          char name[24];
          std::snprintf(name, sizeof name, "frames/%05d.png", t);
          r.frames.emplace_back(name);
        }
      } else {
        r.status = JobStatus::Failed;
        r.error = error;
      }
      r.finished_ms = now_ms();
      persist(r);
    }
    changed_.notify_all();
  }
}

void InferenceService::run_job(const Pending& p) {
  const json& w = p.work;
  const fs::path dir = job_dir(p.id);
  std::optional<KeyframeSketchSet> sketches;
  if (!w.at("sketches").empty()) {
    sketches.emplace();
    for (std::size_t i = 0; i < w.at("sketches").size(); ++i) {
      const auto& s = w.at("sketches")[i];
      const fs::path src = s.at("path").get<std::string>();
      sketches->sketches.push_back(sketch_from_png(read_png(src)));
      sketches->time_points.push_back(s.at("at").get<int>());
      fs::copy_file(src, dir / ("sketch_" + std::to_string(i) + ".png"), fs::copy_options::overwrite_existing);
    }
  }
  VideoClip out;
  if (w.contains("video")) {
    EditRequest req;
    std::vector<PngImage> pngs;
    for (const auto& path : w.at("video")) pngs.push_back(read_png(path.get<std::string>()));
    req.source = clip_from_pngs(pngs);
    req.prompt = w.at("prompt").get<std::string>();
    req.sketches = sketches;
    VelocityProvider velocity;
    const std::string scene_path = w.at("scene").get<std::string>();
    if (!scene_path.empty()) velocity = scene_velocity(json::parse(read_bytes(scene_path)).get<SceneSpec>());
    req.track = mask_rectangle_track(mask_spec_from_json(w.at("mask")), frames_, height_, width_, velocity);
    req.sampler = SamplerConfig{w.at("steps").get<int>(), w.at("cfg").get<double>()};
    out = edit_video(*editor_, req).video;
  } else {
    GenerateRequest req;
    req.prompt = w.at("prompt").get<std::string>();
    req.sketches = sketches;
    req.frames = frames_;
    req.height = height_;
    req.width = width_;
    req.seed = w.at("seed").get<std::uint64_t>();
    req.sampler = SamplerConfig{w.at("steps").get<int>(), w.at("cfg").get<double>()};
    out = generate_video(*generator_, req);
  }
  write_frame_directory(dir / "frames", out);
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpServer::Impl {
  InferenceService& service;
  httplib::Server server;
  explicit Impl(InferenceService& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

std::optional<int> int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw BadRequest(400, std::string("query parameter '") + name + "' must be an integer");
  }
}

}  // namespace

HttpServer::HttpServer(InferenceService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  InferenceService* svc = &service;
  srv.Post("/v1/assets", [svc](const httplib::Request& req, httplib::Response& res) {
    std::vector<std::string> pngs;
    std::string scene;
    if (req.is_multipart_form_data()) {
      std::vector<const httplib::MultipartFormData*> files;
      for (const auto& [name, part] : req.files) {
        if (name == "scene") {
          scene = part.content;
        } else {
          files.push_back(&part);
        }
      }
      // Frame order follows the uploaded file names (00000.png, 00001.png, ...).
      std::stable_sort(files.begin(), files.end(), [](auto* a, auto* b) { return a->filename < b->filename; });
      for (const auto* f : files) pngs.push_back(f->content);
    } else {
      pngs.push_back(req.body);
    }
    ApiResponse r = svc->post_asset(pngs);
    if (r.status == 201 && !scene.empty()) {
      try {
        const auto spec = nlohmann::json::parse(scene).get<SceneSpec>();
        const auto id = nlohmann::json::parse(r.body).at("asset_id").get<std::string>();
        std::ofstream(svc->options().store / "assets" / id / "scene.json") << nlohmann::json(spec).dump();
      } catch (const std::exception& e) {
        r = ApiResponse::error(400, std::string("invalid scene metadata: ") + e.what());
      }
    }
    reply(res, r);
  });
  srv.Post("/v1/generate",
           [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->post_generate(req.body)); });
  srv.Post("/v1/edit", [svc](const httplib::Request& req, httplib::Response& res) { reply(res, svc->post_edit(req.body)); });
  srv.Get(R"(/v1/jobs/([0-9a-fA-F-]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->get_job(req.matches[1]));
  });
  srv.Get(R"(/v1/jobs/([0-9a-fA-F-]+)/frames/(\d+))", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->get_frame(req.matches[1], std::stoi(req.matches[2])));
  });
  srv.Get(R"(/v1/attn/([0-9a-fA-F-]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, svc->get_attention(req.matches[1], int_param(req, "block"), int_param(req, "frame")));
    } catch (const BadRequest& e) {
      reply(res, ApiResponse::error(e.status, e.what()));
    }
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    reply(res, ApiResponse::error(500, msg));
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, ApiResponse::error(res.status, "no such route"));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  std::string host = colon == std::string::npos ? "" : addr.substr(0, colon);
  const std::string port_s = colon == std::string::npos ? addr : addr.substr(colon + 1);
  if (host.empty()) host = "127.0.0.1";
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_s, &used);
    if (used != port_s.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw std::invalid_argument("bad address '" + addr + "', expected HOST:PORT");
  return {host, port};
}

}  // namespace sketchdit
