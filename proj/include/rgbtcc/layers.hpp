#pragma once

// Parameterized building blocks shared by the fusion and enhancement stages.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/image.hpp"

#include <string>
#include <vector>

namespace rgbtcc {

struct Linear {
  Param* weight = nullptr;  // [in, out]
  Param* bias = nullptr;    // [1, out]

  Linear() = default;
  Linear(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out);

  Var operator()(Tape& tape, const Var& x) const;
  void init(Rng& rng) const;
  Eigen::Index in() const { return weight->value.rows(); }
  Eigen::Index out() const { return weight->value.cols(); }

  static Eigen::Index param_count(Eigen::Index in, Eigen::Index out) { return in * out + out; }
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamSet& params, const std::string& name, Eigen::Index channels);

  Var operator()(Tape& tape, const Var& x) const;
  void init() const;
};

/// Two-layer perceptron in -> hidden -> out with GELU in between.
struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out);

  Var operator()(Tape& tape, const Var& x) const;
  void init(Rng& rng) const;

  static Eigen::Index param_count(Eigen::Index in, Eigen::Index hidden, Eigen::Index out) {
    return Linear::param_count(in, hidden) + Linear::param_count(hidden, out);
  }
};

struct MultiHeadSelfAttention {
  Linear q, k, v, o;
  Eigen::Index heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamSet& params, const std::string& name, Eigen::Index channels, Eigen::Index heads);

  /// If `weights` is non-null, receives the per-head [L, L] attention matrices.
  Var operator()(Tape& tape, const Var& x, std::vector<Mat>* weights = nullptr) const;
  void init(Rng& rng) const;
};

/// Pre-normalized transformer encoder layer:
/// x + MHSA(LN(x)), then x + FFN(LN(x)) with FFN expansion x2.
struct EncoderLayer {
  LayerNorm ln1;
  MultiHeadSelfAttention attn;
  LayerNorm ln2;
  Mlp ffn;

  EncoderLayer() = default;
  EncoderLayer(ParamSet& params, const std::string& name, Eigen::Index channels, Eigen::Index heads);

  Var operator()(Tape& tape, const Var& x, std::vector<Mat>* weights = nullptr) const;
  void init(Rng& rng) const;

  static Eigen::Index param_count(Eigen::Index c) { return 8 * c * c + 11 * c; }
};

}  // namespace rgbtcc
