#pragma once

#include "sketchdit/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sketchdit {

using Rng = std::mt19937_64;

enum class Init { Normal, Zero };

/// Dense layer y = x W + b, W stored [in, out].
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, Init init = Init::Normal, bool with_bias = true);

  [[nodiscard]] bool has_bias() const { return bias.value.size() != 0; }
  [[nodiscard]] int in_features() const { return static_cast<int>(weight.value.rows()); }
  [[nodiscard]] int out_features() const { return static_cast<int>(weight.value.cols()); }
  Var forward(Tape& t, Var x) const;
  void rename(const std::string& name);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

/// Transformer block: adaptive-norm attention then adaptive-norm feed-forward.
/// The timestep conditions both norms through a learned shift/scale.
struct DiTBlock {
  Linear modulation;  // cond -> [shift_attn, scale_attn, shift_ff, scale_ff]
  Linear q, k, v, o;
  Linear ff1, ff2;

  DiTBlock() = default;
  DiTBlock(const std::string& name, int width, int ff_mult, Rng& rng);

  // Same weights under a new parameter-name prefix.
  [[nodiscard]] DiTBlock copy_as(const std::string& name) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
  void set_trainable(bool trainable);
  [[nodiscard]] std::size_t parameter_count() const;
};

struct BlockCapture {
  ops::AttentionProbs* attention = nullptr;
};

/// One DiT block over an arbitrary token set. `cond` is silu(timestep embedding).
Var dit_block_forward(Tape& t, const DiTBlock& block, Var tokens, Var cond, int heads,
                      ops::AttentionProbs* capture = nullptr);

/// Pre-norm two-layer GELU MLP, optionally with a residual connection.
Var feed_forward(Tape& t, const Linear& up, const Linear& down, Var x, bool pre_norm, bool residual);

std::size_t count_parameters(const std::vector<const Parameter*>& params);

}  // namespace sketchdit
