#include "sketchdit/checkpoint.hpp"

#include "sketchdit/errors.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace sketchdit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'K', 'D', 'T'};

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t size) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large files.
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

nlohmann::json ModelSpec::json() const {
  nlohmann::json j{{"backbone", backbone}, {"insertion", insertion}};
  j["control"] = control ? nlohmann::json(*control) : nlohmann::json(nullptr);
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.backbone = j.at("backbone").get<BackboneConfig>();
  if (j.contains("control") && !j.at("control").is_null()) s.control = j.at("control").get<ControlConfig>();
  s.insertion = j.value("insertion", false);
  if (s.insertion && !s.control) throw CheckpointError("insertion branch without a sketch branch");
  return s;
}

std::string ModelSpec::hash() const {
  const std::string canon = json().dump();
  return sha256_hex(canon.data(), canon.size());
}

ModelSpec spec_of(const SketchVideoModel& model) {
  ModelSpec s;
  s.backbone = model.backbone.config;
  if (model.control) s.control = model.control->config;
  s.insertion = model.insertion.has_value();
  return s;
}

SketchVideoModel build_model(const ModelSpec& spec, std::uint64_t seed, bool random_video_half) {
  return assemble_model(Backbone::create(spec.backbone, seed), spec, seed, random_video_half);
}

SketchVideoModel assemble_model(Backbone backbone, const ModelSpec& spec, std::uint64_t seed, bool random_video_half) {
  SketchVideoModel m;
  m.backbone = std::move(backbone);
  m.backbone.set_trainable(true);
  if (spec.control) {
    m.backbone.set_trainable(false);
    m.control = ControlBranch::create(m.backbone, *spec.control, seed + 1);
    if (spec.insertion) {
      widen_for_editing(*m.control, seed + 2, random_video_half);
      m.insertion = VideoInsertionBranch::create(m.backbone, *spec.control);
    }
  }
  return m;
}

const CheckpointData::Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string backbone_hash(const Backbone& backbone) {
  std::vector<const Parameter*> ps;
  backbone.collect(ps);
  std::vector<std::uint8_t> buf;
  for (const Parameter* p : ps) {
    buf.insert(buf.end(), p->name.begin(), p->name.end());
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p->value.rows()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put<float>(buf, static_cast<float>(p->value.data()[i]));
  }
  return sha256_hex(buf.data(), buf.size());
}

std::vector<std::uint8_t> serialize_checkpoint(const SketchVideoModel& model, const nlohmann::json& meta) {
  std::vector<const Parameter*> ps;
  model.collect(ps);
  const ModelSpec spec = spec_of(model);
  nlohmann::json header{{"format", "sketchdit-checkpoint"},
                        {"model", spec.json()},
                        {"config_hash", spec.hash()},
                        {"schedule", model.schedule},
                        {"backbone_sha256", backbone_hash(model.backbone)},
                        {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Parameter* p : ps) {
    table.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(float);
  }
  header["params"] = std::move(table);
  const std::string h = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + h.size() + offset + 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  for (const Parameter* p : ps) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put<float>(out, static_cast<float>(p->value.data()[i]));
  }
  put<std::uint32_t>(out, crc(out.data(), out.size()));
  return out;
}

void save_checkpoint(const fs::path& path, const SketchVideoModel& model, const nlohmann::json& meta) {
  const auto bytes = serialize_checkpoint(model, meta);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointData parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a sketchdit checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc(bytes.data(), bytes.size() - 4) != stored_crc) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size() - 4) throw CheckpointError("truncated checkpoint header");
  CheckpointData data;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
    data.spec = ModelSpec::from_json(header.at("model"));
    data.schedule = header.at("schedule").get<NoiseSchedule>();
    data.meta = header.value("meta", nlohmann::json::object());
    data.meta["backbone_sha256"] = header.at("backbone_sha256");
    if (data.spec.hash() != header.at("config_hash").get<std::string>()) {
      throw CheckpointError("checkpoint config hash does not match its configuration");
    }
    pos += header_len;
    const std::size_t blobs = pos;
    for (const auto& entry : header.at("params")) {
      CheckpointData::Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.rows = entry.at("rows").get<int>();
      t.cols = entry.at("cols").get<int>();
      const std::size_t offset = blobs + entry.at("offset").get<std::size_t>();
      const std::size_t count = static_cast<std::size_t>(t.rows) * t.cols;
      if (offset + count * sizeof(float) > bytes.size() - 4) throw CheckpointError("tensor " + t.name + " overruns file");
      t.values.resize(count);
      std::memcpy(t.values.data(), bytes.data() + offset, count * sizeof(float));
      data.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return data;
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("missing checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return parse_checkpoint(bytes);
}

PartialLoadReport load_by_name(SketchVideoModel& target, const CheckpointData& source, const std::string& prefix) {
  std::vector<Parameter*> ps;
  target.collect(ps);
  PartialLoadReport report;
  for (Parameter* p : ps) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const auto* t = source.find(p->name);
    if (t == nullptr) {
      report.missing.push_back(p->name);
      continue;
    }
    if (t->cols != p->value.cols() || t->rows > p->value.rows()) {
      throw CheckpointError("shape mismatch for " + p->name);
    }
    for (int r = 0; r < t->rows; ++r) {
      for (int c = 0; c < t->cols; ++c) p->value(r, c) = t->values[static_cast<std::size_t>(r) * t->cols + c];
    }
    (t->rows == p->value.rows() ? report.loaded : report.row_prefix).push_back(p->name);
  }
  return report;
}

SketchVideoModel model_from_checkpoint(const CheckpointData& data) {
  SketchVideoModel m = build_model(data.spec, 0);
  m.schedule = data.schedule;
  const PartialLoadReport r = load_by_name(m, data);
  if (!r.missing.empty() || !r.row_prefix.empty()) {
    throw CheckpointError("checkpoint does not cover parameter " +
                          (!r.missing.empty() ? r.missing.front() : r.row_prefix.front()));
  }
  if (data.tensors.size() != r.loaded.size()) throw CheckpointError("checkpoint holds unknown tensors");
  return m;
}

Backbone backbone_from_checkpoint(const CheckpointData& data) {
  SketchVideoModel m = build_model(ModelSpec{data.spec.backbone, std::nullopt, false}, 0);
  const PartialLoadReport r = load_by_name(m, data, "backbone.");
  if (!r.missing.empty() || !r.row_prefix.empty()) throw CheckpointError("checkpoint lacks backbone parameters");
  return std::move(m.backbone);
}

SketchVideoModel load_checkpoint(const fs::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

}  // namespace sketchdit
