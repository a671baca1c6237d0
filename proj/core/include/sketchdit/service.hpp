#pragma once

#include "sketchdit/model.hpp"

#include <nlohmann/json.hpp>

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sketchdit {

inline constexpr int kMaxSketchesPerRequest = 2;

struct ServiceOptions {
  std::filesystem::path checkpoint;       // generation checkpoint
  std::filesystem::path edit_checkpoint;  // optional editing checkpoint
  std::filesystem::path store;            // assets/ and jobs/ live here
  int workers = 1;                        // 0 leaves jobs queued (tests)
  std::size_t queue_capacity = 8;
  int attention_timestep = 500;
};

enum class JobStatus { Queued, Running, Done, Failed };

[[nodiscard]] std::string to_string(JobStatus s);
[[nodiscard]] JobStatus job_status_from_string(const std::string& s);

struct JobRecord {
  std::string id;
  std::string kind;  // generate | edit
  JobStatus status = JobStatus::Queued;
  nlohmann::json request;
  std::vector<std::string> frames;  // relative to the job directory
  std::uint64_t seed = 0;
  double created_ms = 0, started_ms = 0, finished_ms = 0;  // Unix epoch
  std::string error;

  [[nodiscard]] nlohmann::json json() const;
  static JobRecord from_json(const nlohmann::json& j);
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  static ApiResponse json(int status, const nlohmann::json& body);
  static ApiResponse error(int status, const std::string& message);
};

/// Asset store, job queue and worker pool behind the /v1 API. Handlers are
/// plain functions so they can be exercised without a socket.
class InferenceService {
 public:
  InferenceService(ServiceOptions options, std::shared_ptr<const SketchVideoModel> generator,
                   std::shared_ptr<const SketchVideoModel> editor = nullptr);
  /// Loads checkpoints named by the options.
  explicit InferenceService(ServiceOptions options);
  ~InferenceService();

  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// One PNG is an image asset (sketch or single frame); several are a frame sequence in the given order.
  ApiResponse post_asset(const std::vector<std::string>& pngs);
  ApiResponse post_generate(const std::string& body);
  ApiResponse post_edit(const std::string& body);
  ApiResponse get_job(const std::string& id) const;
  ApiResponse get_frame(const std::string& id, int n) const;
  ApiResponse get_attention(const std::string& id, std::optional<int> block, std::optional<int> frame) const;

  /// Blocks until the job leaves queued/running or the timeout passes.
  [[nodiscard]] std::optional<JobRecord> wait(const std::string& id, double timeout_seconds) const;
  [[nodiscard]] std::optional<JobRecord> job(const std::string& id) const;

  [[nodiscard]] int frames() const { return frames_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] const ServiceOptions& options() const { return options_; }

 private:
  struct Pending {
    std::string id;
    nlohmann::json work;  // resolved request
  };

  ServiceOptions options_;
  std::shared_ptr<const SketchVideoModel> generator_, editor_;
  int frames_ = 0, height_ = 0, width_ = 0;

  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::condition_variable work_ready_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<Pending> queue_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;

  void init();
  void load_store();
  void worker_loop();
  void run_job(const Pending& p);
  void persist(const JobRecord& r) const;  // caller holds mu_
  ApiResponse enqueue(const std::string& kind, nlohmann::json request, nlohmann::json work, std::uint64_t seed);
  [[nodiscard]] std::filesystem::path job_dir(const std::string& id) const;
  [[nodiscard]] std::filesystem::path asset_dir(const std::string& id) const;
  [[nodiscard]] std::optional<std::vector<std::filesystem::path>> asset_frames(const std::string& id) const;
  [[nodiscard]] std::string new_id();
  std::mt19937_64 id_rng_;
};

/// Serves the /v1 routes over HTTP until stop() is called from another thread.
class HttpServer {
 public:
  explicit HttpServer(InferenceService& service);
  ~HttpServer();
  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocking
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" with an optional host (defaults to 127.0.0.1).
[[nodiscard]] std::pair<std::string, int> parse_address(const std::string& addr);

}  // namespace sketchdit
