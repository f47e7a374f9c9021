#include "rgbtcc/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace rgbtcc {

Linear::Linear(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out)
    : weight(&params.add(name + ".weight", in, out)), bias(&params.add(name + ".bias", 1, out)) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
  return linear(x, tape.param(*weight), tape.param(*bias));
}

void Linear::init(Rng& rng) const {
  init_fan_in_uniform(*weight, weight->value.rows(), rng);
  init_constant(*bias, 0.0);
}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, Eigen::Index channels)
    : gamma(&params.add(name + ".gamma", 1, channels)), beta(&params.add(name + ".beta", 1, channels)) {}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return layer_norm_rows(x, tape.param(*gamma), tape.param(*beta));
}

void LayerNorm::init() const {
  init_constant(*gamma, 1.0);
  init_constant(*beta, 0.0);
}

Mlp::Mlp(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out)
    : fc1(params, name + ".fc1", in, hidden), fc2(params, name + ".fc2", hidden, out) {}

Var Mlp::operator()(Tape& tape, const Var& x) const { return fc2(tape, gelu(fc1(tape, x))); }

void Mlp::init(Rng& rng) const {
  fc1.init(rng);
  fc2.init(rng);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamSet& params, const std::string& name,
                                               Eigen::Index channels, Eigen::Index heads_)
    : q(params, name + ".q", channels, channels),
      k(params, name + ".k", channels, channels),
      v(params, name + ".v", channels, channels),
      o(params, name + ".o", channels, channels),
      heads(heads_) {
  if (heads < 1 || channels % heads != 0)
    throw std::invalid_argument("attention: channels must be divisible by heads");
}

Var MultiHeadSelfAttention::operator()(Tape& tape, const Var& x, std::vector<Mat>* weights) const {
  const Eigen::Index c = x.cols();
  const Eigen::Index d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Var qs = q(tape, x);
  Var ks = k(tape, x);
  Var vs = v(tape, x);
  std::vector<Var> outs;
  outs.reserve(heads);
  if (weights != nullptr) weights->clear();
  for (Eigen::Index h = 0; h < heads; ++h) {
    Var qh = slice_cols(qs, h * d, d);
    Var kh = slice_cols(ks, h * d, d);
    Var vh = slice_cols(vs, h * d, d);
    Var a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
    if (weights != nullptr) weights->push_back(a.value());
    outs.push_back(matmul(a, vh));
  }
  return o(tape, concat_cols(outs));
}

void MultiHeadSelfAttention::init(Rng& rng) const {
  q.init(rng);
  k.init(rng);
  v.init(rng);
  o.init(rng);
}

EncoderLayer::EncoderLayer(ParamSet& params, const std::string& name, Eigen::Index channels,
                           Eigen::Index heads)
    : ln1(params, name + ".ln1", channels),
      attn(params, name + ".attn", channels, heads),
      ln2(params, name + ".ln2", channels),
      ffn(params, name + ".ffn", channels, 2 * channels, channels) {}

Var EncoderLayer::operator()(Tape& tape, const Var& x, std::vector<Mat>* weights) const {
  Var h = add(x, attn(tape, ln1(tape, x), weights));
  return add(h, ffn(tape, ln2(tape, h)));
}

void EncoderLayer::init(Rng& rng) const {
  ln1.init();
  attn.init(rng);
  ln2.init();
  ffn.init(rng);
}

}  // namespace rgbtcc
