#include "sketchdit/nn.hpp"

#include <cmath>

namespace sketchdit {

Linear::Linear(const std::string& name, int in, int out, Rng& rng, Init init, bool with_bias) {
  weight.name = name + ".weight";
  weight.value = Mat::Zero(in, out);
  if (init == Init::Normal) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = dist(rng);
  }
  if (with_bias) {
    bias.name = name + ".bias";
    bias.value = Mat::Zero(1, out);
  }
}

Var Linear::forward(Tape& t, Var x) const {
  if (has_bias()) return ops::linear(t, x, t.param(weight), t.param(bias));
  return ops::linear(t, x, t.param(weight));
}

void Linear::rename(const std::string& name) {
  weight.name = name + ".weight";
  if (has_bias()) bias.name = name + ".bias";
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias()) out.push_back(&bias);
}

void Linear::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  if (has_bias()) out.push_back(&bias);
}

DiTBlock::DiTBlock(const std::string& name, int width, int ff_mult, Rng& rng)
    : modulation(name + ".modulation", width, 4 * width, rng, Init::Zero),
      q(name + ".attn_q", width, width, rng),
      k(name + ".attn_k", width, width, rng),
      v(name + ".attn_v", width, width, rng),
      o(name + ".attn_o", width, width, rng),
      ff1(name + ".ff1", width, ff_mult * width, rng),
      ff2(name + ".ff2", ff_mult * width, width, rng) {}

DiTBlock DiTBlock::copy_as(const std::string& name) const {
  DiTBlock b = *this;
  b.modulation.rename(name + ".modulation");
  b.q.rename(name + ".attn_q");
  b.k.rename(name + ".attn_k");
  b.v.rename(name + ".attn_v");
  b.o.rename(name + ".attn_o");
  b.ff1.rename(name + ".ff1");
  b.ff2.rename(name + ".ff2");
  return b;
}

void DiTBlock::collect(std::vector<Parameter*>& out) {
  for (Linear* l : {&modulation, &q, &k, &v, &o, &ff1, &ff2}) l->collect(out);
}

void DiTBlock::collect(std::vector<const Parameter*>& out) const {
  for (const Linear* l : {&modulation, &q, &k, &v, &o, &ff1, &ff2}) l->collect(out);
}

void DiTBlock::set_trainable(bool trainable) {
  std::vector<Parameter*> ps;
  collect(ps);
  for (Parameter* p : ps) p->trainable = trainable;
}

std::size_t DiTBlock::parameter_count() const {
  std::vector<const Parameter*> ps;
  collect(ps);
  return count_parameters(ps);
}

Var dit_block_forward(Tape& t, const DiTBlock& block, Var tokens, Var cond, int heads,
                      ops::AttentionProbs* capture) {
  const int d = static_cast<int>(t.value(tokens).cols());
  Var mod = block.modulation.forward(t, cond);
  Var shift_a = ops::slice_cols(t, mod, 0, d);
  Var scale_a = ops::slice_cols(t, mod, d, d);
  Var shift_f = ops::slice_cols(t, mod, 2 * d, d);
  Var scale_f = ops::slice_cols(t, mod, 3 * d, d);

  Var a = ops::modulate(t, ops::layer_norm(t, tokens), shift_a, scale_a);
  Var att = ops::attention(t, block.q.forward(t, a), block.k.forward(t, a), block.v.forward(t, a), heads, capture);
  Var x = ops::add(t, tokens, block.o.forward(t, att));

  Var f = ops::modulate(t, ops::layer_norm(t, x), shift_f, scale_f);
  return ops::add(t, x, block.ff2.forward(t, ops::gelu(t, block.ff1.forward(t, f))));
}

Var feed_forward(Tape& t, const Linear& up, const Linear& down, Var x, bool pre_norm, bool residual) {
  Var h = pre_norm ? ops::layer_norm(t, x) : x;
  Var y = down.forward(t, ops::gelu(t, up.forward(t, h)));
  return residual ? ops::add(t, x, y) : y;
}

std::size_t count_parameters(const std::vector<const Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

}  // namespace sketchdit
