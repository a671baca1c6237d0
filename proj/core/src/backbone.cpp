#include "sketchdit/backbone.hpp"

#include "sketchdit/codec.hpp"
#include "sketchdit/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

namespace sketchdit {

BackboneConfig BackboneConfig::toy() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper_scale() {
  BackboneConfig c;
  c.blocks = 30;
  c.width = 1920;
  c.heads = 30;
  c.ff_mult = 4;
  c.max_text_tokens = 226;
  c.latent_frames = codec::latent_frames(49);
  c.grid_h = 480 / codec::kSpatial;
  c.grid_w = 720 / codec::kSpatial;
  return c;
}

void BackboneConfig::validate() const {
  if (blocks < 1) throw ShapeError("backbone needs at least one block");
  if (width <= 0 || heads <= 0 || width % heads != 0) throw ShapeError("width must be divisible by heads");
  if (width % 8 != 0) throw ShapeError("width must be a multiple of 8 for the positional embedding");
  if (ff_mult < 1 || max_text_tokens < 0) throw ShapeError("invalid feed-forward or text settings");
  if (!(sigma_data > 0.0)) throw ShapeError("sigma_data must be positive");
  if (latent_frames < 1 || grid_h < 1 || grid_w < 1) throw ShapeError("invalid latent grid");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"blocks", c.blocks},
                     {"width", c.width},
                     {"heads", c.heads},
                     {"ff_mult", c.ff_mult},
                     {"max_text_tokens", c.max_text_tokens},
                     {"latent_frames", c.latent_frames},
                     {"grid_h", c.grid_h},
                     {"grid_w", c.grid_w},
                     {"positional_embedding", c.positional_embedding},
                     {"sigma_data", c.sigma_data}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.blocks = j.at("blocks").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_mult = j.at("ff_mult").get<int>();
  c.max_text_tokens = j.at("max_text_tokens").get<int>();
  c.latent_frames = j.at("latent_frames").get<int>();
  c.grid_h = j.at("grid_h").get<int>();
  c.grid_w = j.at("grid_w").get<int>();
  c.positional_embedding = j.value("positional_embedding", true);
  c.sigma_data = j.value("sigma_data", 0.2);
}

// ---------------------------------------------------------------------------
// Tokenizer

const std::vector<std::string>& Tokenizer::vocabulary() {
  static const std::vector<std::string> vocab = {
      "<unk>", ",",      "red",   "green",  "blue",     "yellow", "cyan",  "magenta", "white",
      "orange", "purple", "square", "circle", "triangle", "moves",  "still", "left",    "right",
      "up",     "down",   "and",    "a",      "the",      "on",     "black", "gray",    "background",
      "empty",  "small",  "large",  "slowly", "quickly"};
  return vocab;
}

std::vector<int> Tokenizer::encode(std::string_view prompt) {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& v = vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<int>(i));
    return m;
  }();
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = index.find(word);
    ids.push_back(it == index.end() ? kUnk : it->second);
    word.clear();
  };
  for (char ch : prompt) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (ch == ',') {
      flush();
      ids.push_back(1);
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) {
  const auto& v = vocabulary();
  std::string out;
  for (int id : ids) {
    const std::string& w = (id >= 0 && id < static_cast<int>(v.size())) ? v[id] : v[kUnk];
    if (w != "," && !out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// ---------------------------------------------------------------------------

LatentLayout LatentLayout::video(int frames, int grid_h, int grid_w) {
  LatentLayout l;
  l.grid_h = grid_h;
  l.grid_w = grid_w;
  l.time_positions.resize(frames);
  for (int i = 0; i < frames; ++i) l.time_positions[i] = i;
  return l;
}

Backbone Backbone::create(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Backbone bb;
  bb.config = config;
  const int d = config.width;
  bb.text_embed.name = "backbone.text_embed";
  bb.text_embed.value.resize(Tokenizer::vocab_size(), d);
  std::normal_distribution<double> dist(0.0, 0.5);
  for (Eigen::Index i = 0; i < bb.text_embed.value.size(); ++i) bb.text_embed.value.data()[i] = dist(rng);
  bb.patch_embed = Linear("backbone.patch_embed", codec::kChannels, d, rng);
  bb.time_in = Linear("backbone.time_in", d, d, rng);
  bb.time_out = Linear("backbone.time_out", d, d, rng);
  for (int i = 0; i < config.blocks; ++i) {
    bb.blocks.emplace_back("backbone.block" + std::to_string(i), d, config.ff_mult, rng);
  }
  bb.final_modulation = Linear("backbone.final_modulation", d, 2 * d, rng, Init::Zero);
  bb.head = Linear("backbone.head", d, codec::kChannels, rng, Init::Zero);
  bb.data_mean.name = "backbone.data_mean";
  bb.data_mean.value = Mat::Zero(1, codec::kChannels);
  return bb;
}

void Backbone::collect(std::vector<Parameter*>& out) {
  out.push_back(&text_embed);
  patch_embed.collect(out);
  time_in.collect(out);
  time_out.collect(out);
  for (auto& b : blocks) b.collect(out);
  final_modulation.collect(out);
  head.collect(out);
  out.push_back(&data_mean);
}

void Backbone::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&text_embed);
  patch_embed.collect(out);
  time_in.collect(out);
  time_out.collect(out);
  for (const auto& b : blocks) b.collect(out);
  final_modulation.collect(out);
  head.collect(out);
  out.push_back(&data_mean);
}

void Backbone::set_trainable(bool trainable) {
  std::vector<Parameter*> ps;
  collect(ps);
  for (Parameter* p : ps) p->trainable = trainable;
}

std::size_t Backbone::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  return count_parameters(ps);
}

// ---------------------------------------------------------------------------
// Embeddings

namespace {

void fill_sinusoid(RowVec& out, int offset, int dims, double pos, double base) {
  const int half = dims / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(base, -static_cast<double>(k) / half);
    out(offset + 2 * k) = std::sin(pos * freq);
    out(offset + 2 * k + 1) = std::cos(pos * freq);
  }
}

}  // namespace

RowVec positional_embedding_3d(int width, int t, int y, int x) {
  RowVec out = RowVec::Zero(width);
  const int dt = width / 4;
  const int dx = (width - dt) / 2;
  fill_sinusoid(out, 0, dt, t, 100.0);
  fill_sinusoid(out, dt, dx, y, 100.0);
  fill_sinusoid(out, dt + dx, width - dt - dx, x, 100.0);
  return out;
}

Mat video_positions(const LatentLayout& layout, int width) {
  Mat pos(layout.tokens(), width);
  int row = 0;
  for (int f = 0; f < layout.frames(); ++f) {
    for (int y = 0; y < layout.grid_h; ++y) {
      for (int x = 0; x < layout.grid_w; ++x) {
        pos.row(row++) = positional_embedding_3d(width, layout.time_positions[f], y, x);
      }
    }
  }
  return pos;
}

Mat text_positions(int count, int width) {
  Mat pos(count, width);
  for (int i = 0; i < count; ++i) {
    RowVec r = RowVec::Zero(width);
    fill_sinusoid(r, 0, width, i, 10000.0);
    pos.row(i) = r;
  }
  return pos;
}

RowVec timestep_sinusoid(int timestep, int width) {
  RowVec r = RowVec::Zero(width);
  fill_sinusoid(r, 0, width, timestep, 10000.0);
  return r;
}

Var text_encode(Tape& t, const Backbone& bb, const std::vector<int>& tokens) {
  const int d = bb.config.width;
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (int id : tokens) {
    if (static_cast<int>(ids.size()) == bb.config.max_text_tokens) break;
    ids.push_back(id >= 0 && id < Tokenizer::vocab_size() ? id : Tokenizer::kUnk);
  }
  if (ids.empty()) return t.constant(Mat(0, d));
  Var emb = ops::gather_rows(t, t.param(bb.text_embed), ids);
  return ops::add(t, emb, t.constant(text_positions(static_cast<int>(ids.size()), d)));
}

Var patchify(Tape& t, const Backbone& bb, const Mat& latent_tokens, const LatentLayout& layout) {
  if (latent_tokens.rows() != layout.tokens() || latent_tokens.cols() != codec::kChannels) {
    throw ShapeError("patchify: latent shape does not match layout");
  }
  Var x = bb.patch_embed.forward(t, t.constant(latent_tokens));
  if (!bb.config.positional_embedding) return x;
  return ops::add(t, x, t.constant(video_positions(layout, bb.config.width)));
}

Var patchify(Tape& t, const Backbone& bb, const Mat& latent_tokens, const LatentLayout& layout, Var text) {
  return ops::concat_rows(t, {text, patchify(t, bb, latent_tokens, layout)});
}

Var timestep_condition(Tape& t, const Backbone& bb, int timestep) {
  Var s = t.constant(timestep_sinusoid(timestep, bb.config.width));
  Var h = bb.time_out.forward(t, ops::silu(t, bb.time_in.forward(t, s)));
  return ops::silu(t, h);
}

Var unpatchify(Tape& t, const Backbone& bb, Var video_tokens, Var cond) {
  const int d = bb.config.width;
  Var mod = bb.final_modulation.forward(t, cond);
  Var x = ops::modulate(t, ops::layer_norm(t, video_tokens), ops::slice_cols(t, mod, 0, d), ops::slice_cols(t, mod, d, d));
  return bb.head.forward(t, x);
}

Var denoise(Tape& t, const Backbone& bb, const DenoiseInput& in, const BlockHook& hook) {
  if (in.noisy == nullptr) throw ShapeError("denoise: missing noisy latent");
  Var text = text_encode(t, bb, in.prompt);
  const int text_len = static_cast<int>(t.value(text).rows());
  const int video_len = in.layout.tokens();
  Var x = patchify(t, bb, *in.noisy, in.layout, text);
  Var cond = timestep_condition(t, bb, in.timestep);
  for (int i = 0; i < static_cast<int>(bb.blocks.size()); ++i) {
    if (hook) {
      Var h = ops::slice_rows(t, x, text_len, video_len);
      if (auto residual = hook(i, h, cond)) x = ops::add_rows_at(t, x, *residual, text_len);
    }
    x = dit_block_forward(t, bb.blocks[i], x, cond, bb.config.heads);
    if (!t.value(x).allFinite()) {
      throw NonFiniteError("non-finite activation after backbone block " + std::to_string(i));
    }
  }
  return unpatchify(t, bb, ops::slice_rows(t, x, text_len, video_len), cond);
}

Var denoise(Tape& t, const Backbone& bb, const DenoiseInput& in, const ResidualMap& residuals) {
  for (const auto& [block, _] : residuals) {
    if (block < 0 || block >= static_cast<int>(bb.blocks.size())) {
      throw RangeError("residual supplied for unknown block " + std::to_string(block));
    }
  }
  if (residuals.empty()) return denoise(t, bb, in, BlockHook{});
  return denoise(t, bb, in, [&](int block, Var, Var) -> std::optional<Var> {
    if (auto it = residuals.find(block); it != residuals.end()) return it->second;
    return std::nullopt;
  });
}

}  // namespace sketchdit
