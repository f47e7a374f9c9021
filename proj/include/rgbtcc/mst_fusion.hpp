#pragma once

// Count-guided multi-scale token fusion.
//
// Color and thermal level-4 tokens plus one shared learnable count token are
// arranged into three sequences of different granularity:
//   initial  [N^2 color, N^2 thermal, count]   length 2N^2+1
//   middle   [N color,   N thermal,   count]   length 2N+1 (one token per grid row)
//   large    [1 color,   1 thermal,   count]   length 3
// Each runs through its own two-layer self-attention stack. The middle and
// large outputs are expanded back to the initial layout segment by segment,
// combined with the initial sequence, and the three branches are shrunk back
// to C channels. The count slot is always the last row.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/layers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rgbtcc {

struct FusionConfig {
  Eigen::Index token_grid_n = 7;
  Eigen::Index channels = 128;
  Eigen::Index heads = 4;
  Eigen::Index mhsa_layers_per_branch = 2;
  bool enable_count_token = true;
  bool enable_multiscale = true;

  void validate() const;
};

/// Segment sizes of a token sequence in [color, thermal, count] order.
struct SequenceLayout {
  Eigen::Index color = 0;
  Eigen::Index thermal = 0;
  Eigen::Index count = 0;  // 0 or 1

  Eigen::Index length() const { return color + thermal + count; }
  Eigen::Index thermal_start() const { return color; }
  Eigen::Index count_start() const { return color + thermal; }
  bool operator==(const SequenceLayout&) const = default;
};

struct TokenSequence {
  Var tokens;  // [L, C]
  SequenceLayout layout;
};

struct FusedState {
  Var g_r;                     // [N^2, C]
  Var g_t;                     // [N^2, C]
  std::optional<Var> g_count;  // [1, C], absent when the count token is disabled
};

/// Concatenates [color, thermal, count] along the token axis. `count` may be
/// null when the count token is disabled.
TokenSequence build_initial_sequence(const Var& f_r4, const Var& f_t4, const Var* count);

/// Reshapes [A, C] -> [B, (A/B)*C] row-major and applies `map` ((A/B)*C -> C).
Var merge_tokens(Tape& tape, const Var& seq, Eigen::Index target, const Linear& map);

/// Expands each segment of `seq` back to `target` layout through per-segment
/// maps C -> factor*C followed by a row-major reshape. The count slot maps 1 -> 1.
struct RestoreMaps {
  Linear color;
  Linear thermal;
  std::optional<Linear> count;
};
Var restore_length(Tape& tape, const TokenSequence& seq, const SequenceLayout& target, const RestoreMaps& maps);

/// Channel concat [g, f1] -> MLP(2C -> 2C -> C).
Var residual_combine(Tape& tape, const Var& g, const Var& f1, const Mlp& mlp);

/// Splits a [L, C] sequence in `layout` into the fused color/thermal/count parts.
FusedState split_fused(const Var& seq, const SequenceLayout& layout);

class MstFusion {
 public:
  MstFusion(ParamSet& params, std::string prefix, const FusionConfig& config);

  void init(Rng& rng);

  const FusionConfig& config() const { return config_; }

  TokenSequence build_middle_sequence(Tape& tape, const Var& f_r4, const Var& f_t4, const Var* count) const;
  TokenSequence build_large_sequence(Tape& tape, const Var& f_r4, const Var& f_t4, const Var* count) const;

  /// Runs self-attention branch `branch` (0 initial, 1 middle, 2 large).
  TokenSequence mhsa_branch(Tape& tape, const TokenSequence& seq, int branch,
                            std::vector<Mat>* last_weights = nullptr) const;

  FusedState fuse_branches(Tape& tape, const TokenSequence& f1p, const Var& g2p, const Var& g3p) const;

  /// Full fusion pass. `count` is the shared [1, C] count token leaf; it must
  /// be non-null exactly when the count token is enabled.
  FusedState forward(Tape& tape, const Var& f_r4, const Var& f_t4, const Var* count) const;

  /// Access to the per-stage maps for constructed-weight tests.
  const Linear& merge_middle(bool thermal) const { return thermal ? merge_mid_t_ : merge_mid_r_; }
  const Linear& merge_large(bool thermal) const { return thermal ? merge_large_t_ : merge_large_r_; }
  const RestoreMaps& restore_middle() const { return restore_mid_; }
  const RestoreMaps& restore_large() const { return restore_large_; }
  const Mlp& combine_middle() const { return combine_mid_; }
  const Mlp& combine_large() const { return combine_large_; }
  const Mlp& fuse() const { return fuse_; }

 private:
  FusionConfig config_;
  std::string prefix_;
  std::vector<std::vector<EncoderLayer>> branches_;
  Linear merge_mid_r_, merge_mid_t_, merge_large_r_, merge_large_t_;
  RestoreMaps restore_mid_, restore_large_;
  Mlp combine_mid_, combine_large_, fuse_;
};

/// Closed-form parameter count for a fusion config.
Eigen::Index fusion_param_count(const FusionConfig& config);

}  // namespace rgbtcc
