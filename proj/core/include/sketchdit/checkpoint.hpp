#pragma once

#include "sketchdit/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sketchdit {

/// Checkpoint container:
///   "SKDT" | u32 version | u64 header length | JSON header | f32 LE blobs | u32 crc32
/// The CRC covers every byte before it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelSpec {
  BackboneConfig backbone;
  std::optional<ControlConfig> control;
  bool insertion = false;

  [[nodiscard]] nlohmann::json json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  [[nodiscard]] std::string hash() const;  // SHA-256 of the canonical JSON
};

[[nodiscard]] ModelSpec spec_of(const SketchVideoModel& model);

struct CheckpointData;

/// Fresh model with the architecture of `spec`: backbone from `seed`, control and insertion
/// branches initialised from that backbone (residual heads widened when editing).
[[nodiscard]] SketchVideoModel build_model(const ModelSpec& spec, std::uint64_t seed, bool random_video_half = false);

/// Same as build_model around an existing (typically pretrained) backbone.
[[nodiscard]] SketchVideoModel assemble_model(Backbone backbone, const ModelSpec& spec, std::uint64_t seed,
                                              bool random_video_half = false);

/// Backbone weights of a checkpoint, whatever branches it also carries.
[[nodiscard]] Backbone backbone_from_checkpoint(const CheckpointData& data);

struct CheckpointData {
  ModelSpec spec;
  NoiseSchedule schedule;
  nlohmann::json meta;  // stage, step, backbone hash, free-form notes
  struct Tensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<float> values;
  };
  std::vector<Tensor> tensors;

  [[nodiscard]] const Tensor* find(const std::string& name) const;
};

[[nodiscard]] std::vector<std::uint8_t> serialize_checkpoint(const SketchVideoModel& model, const nlohmann::json& meta);
void save_checkpoint(const std::filesystem::path& path, const SketchVideoModel& model, const nlohmann::json& meta = {});

/// Throws CheckpointError on bad magic, version, checksum or config hash.
[[nodiscard]] CheckpointData parse_checkpoint(const std::vector<std::uint8_t>& bytes);
[[nodiscard]] CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Full load: rebuilds the model described by the checkpoint.
[[nodiscard]] SketchVideoModel model_from_checkpoint(const CheckpointData& data);
[[nodiscard]] SketchVideoModel load_checkpoint(const std::filesystem::path& path);

struct PartialLoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> row_prefix;  // source filled only the leading rows
  std::vector<std::string> missing;     // target parameters without a source tensor
};

/// Copies tensors onto same-named target parameters. A source with fewer rows
/// than its target fills the leading rows and leaves the rest untouched.
PartialLoadReport load_by_name(SketchVideoModel& target, const CheckpointData& source, const std::string& prefix = "");

/// SHA-256 over the float32 image of every backbone parameter, in order.
[[nodiscard]] std::string backbone_hash(const Backbone& backbone);

}  // namespace sketchdit
