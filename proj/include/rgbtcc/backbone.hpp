#pragma once

// Four-stage hierarchical feature extractor used for each modality.
//
// Each stage is a patch merge (space-to-depth by the stride ratio to the
// previous stage) followed by a pointwise linear mix, per-channel spatial
// normalization and GELU. `blocks_per_stage` residual pointwise blocks follow.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/image.hpp"

#include <array>
#include <string>
#include <vector>

namespace rgbtcc {

struct BackboneConfig {
  Eigen::Index in_channels = 3;
  std::array<Eigen::Index, 4> stage_channels{16, 32, 64, 128};
  std::array<Eigen::Index, 4> stage_strides{4, 8, 16, 32};
  Eigen::Index blocks_per_stage = 1;

  /// Throws std::invalid_argument on a broken stride/channel contract.
  void validate() const;
  GridShape level_shape(int level, Eigen::Index height, Eigen::Index width) const;
};

/// Level i is a [h_i*w_i, c_i] token grid in row-major position order.
struct FeaturePyramid {
  std::array<Var, 4> levels;
  std::array<GridShape, 4> shapes;
};

class Backbone {
 public:
  /// Registers parameters under `prefix` (e.g. "backbone.rgb").
  Backbone(ParamSet& params, std::string prefix, const BackboneConfig& config);

  void init(Rng& rng);

  /// Throws on sizes not divisible by the coarsest stride or non-finite pixels.
  FeaturePyramid forward(Tape& tape, const Image& image) const;

  const BackboneConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

 private:
  struct Stage {
    Param* embed_w;
    Param* embed_b;
    Param* norm_g;
    Param* norm_b;
    std::vector<std::array<Param*, 4>> blocks;  // weight, bias, norm gamma, norm beta
  };

  BackboneConfig config_;
  std::string prefix_;
  std::array<Stage, 4> stages_;
};

/// Replicates a single-channel thermal frame to three channels; three-channel
/// input passes through unchanged.
Image make_thermal_input(const Image& thermal);

/// Closed-form parameter count of one backbone stream.
Eigen::Index backbone_param_count(const BackboneConfig& config);

}  // namespace rgbtcc
