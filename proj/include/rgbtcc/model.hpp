#pragma once

// Full counting network: two backbone streams, optional token fusion,
// optional deformable enhancement, and the density regression head.
//
// Variant wiring:
//   neither fusion nor enhancement  head(concat_channels(F_r4, F_t4))
//   fusion only                     head(G_t), G from the fusion stage
//   enhancement only                G = raw level-4 tokens (plus count token)
//   both                            head(O_t)

#include "rgbtcc/backbone.hpp"
#include "rgbtcc/config.hpp"
#include "rgbtcc/deformable.hpp"
#include "rgbtcc/density_head.hpp"
#include "rgbtcc/mst_fusion.hpp"

#include <memory>
#include <optional>

namespace rgbtcc {

/// Intermediate results kept for shape checks and inspection.
struct ForwardTrace {
  FeaturePyramid color;
  FeaturePyramid thermal;
  std::optional<FusedState> fused;
  std::optional<EnhanceOutput> enhanced;
  Var head_input;
};

struct ModelOutput {
  Var density;                    // [n*n, 1]
  std::optional<Var> count_pred;  // [1, 1] when the count token is active
};

class Model {
 public:
  explicit Model(const RunConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Deterministic initialization of every parameter from `seed`.
  void init(std::uint64_t seed);

  /// `thermal` may be 1- or 3-channel.
  ModelOutput forward(Tape& tape, const Image& rgb, const Image& thermal, ForwardTrace* trace = nullptr) const;

  /// Forward pass without gradient bookkeeping beyond one throwaway tape.
  DensityMap predict(const Image& rgb, const Image& thermal) const;

  const RunConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  bool has_count_token() const { return count_token_ != nullptr; }
  bool has_fusion() const { return fusion_ != nullptr; }
  bool has_enhancement() const { return enhance_ != nullptr; }

 private:
  RunConfig config_;
  ParamSet params_;
  std::unique_ptr<Backbone> rgb_backbone_;
  std::unique_ptr<Backbone> thermal_backbone_;
  Param* count_token_ = nullptr;
  std::unique_ptr<MstFusion> fusion_;
  std::unique_ptr<DeformableEnhance> enhance_;
  std::unique_ptr<RegressionHead> head_;
  std::unique_ptr<CountReadout> readout_;
};

/// Validates `config` and builds an initialized model (seeded by config.seed).
std::unique_ptr<Model> assemble_model(const RunConfig& config);

/// Whether the count token takes part in the forward pass for these flags.
bool count_token_active(const AblationFlags& flags);

/// Closed-form parameter count of the model assembled from `config`.
Eigen::Index model_param_count(const RunConfig& config);

}  // namespace rgbtcc
