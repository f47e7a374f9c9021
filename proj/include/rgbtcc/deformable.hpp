#pragma once

// Multi-scale deformable cross-attention: thermal tokens and the count token
// query the multi-scale color features {G_r, F_r^3, F_r^2, F_r^1} by
// bilinearly sampling a few learned offset locations per level.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/backbone.hpp"
#include "rgbtcc/layers.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rgbtcc {

/// Four-corner stencil of a bilinear lookup at normalized (x, y) on an h x w
/// grid with pixel centers at ((j+0.5)/w, (i+0.5)/h). Corners outside the grid
/// carry zero weight (zero padding). dwx/dwy are d(weight)/d(x) and d(weight)/d(y)
/// in normalized coordinates.
template <typename Scalar>
struct BilinearTaps {
  std::array<Eigen::Index, 4> index{};
  std::array<Scalar, 4> weight{};
  std::array<Scalar, 4> dwx{};
  std::array<Scalar, 4> dwy{};
  std::array<bool, 4> inside{};

  BilinearTaps(Eigen::Index h, Eigen::Index w, Scalar x, Scalar y) {
    const Scalar px = x * static_cast<Scalar>(w) - Scalar(0.5);
    const Scalar py = y * static_cast<Scalar>(h) - Scalar(0.5);
    const Scalar fx = std::floor(px);
    const Scalar fy = std::floor(py);
    const Scalar ax = px - fx;
    const Scalar ay = py - fy;
    const Eigen::Index x0 = static_cast<Eigen::Index>(fx);
    const Eigen::Index y0 = static_cast<Eigen::Index>(fy);
    const Scalar sw = static_cast<Scalar>(w);
    const Scalar sh = static_cast<Scalar>(h);
    const Eigen::Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const Eigen::Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const Scalar wx[4] = {1 - ax, ax, 1 - ax, ax};
    const Scalar wy[4] = {1 - ay, 1 - ay, ay, ay};
    const Scalar dx[4] = {-sw, sw, -sw, sw};
    const Scalar dy[4] = {-sh, -sh, sh, sh};
    for (int t = 0; t < 4; ++t) {
      inside[t] = xs[t] >= 0 && xs[t] < w && ys[t] >= 0 && ys[t] < h;
      index[t] = inside[t] ? ys[t] * w + xs[t] : 0;
      weight[t] = inside[t] ? wx[t] * wy[t] : Scalar(0);
      dwx[t] = inside[t] ? dx[t] * wy[t] : Scalar(0);
      dwy[t] = inside[t] ? wx[t] * dy[t] : Scalar(0);
    }
  }
};

/// Bilinear lookup on a [h*w, C] grid (row-major positions) with zero padding.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> bilinear_sample(const Eigen::MatrixBase<Derived>& grid,
                                                                          Eigen::Index h, Eigen::Index w,
                                                                          typename Derived::Scalar x,
                                                                          typename Derived::Scalar y) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> out = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(grid.cols());
  const BilinearTaps<Scalar> taps(h, w, x, y);
  for (int t = 0; t < 4; ++t)
    if (taps.inside[t]) out += taps.weight[t] * grid.row(taps.index[t]);
  return out;
}

struct DeformConfig {
  Eigen::Index channels = 128;
  Eigen::Index heads = 4;
  Eigen::Index points = 4;  // K samples per level and head
  Eigen::Index levels = 4;
  Eigen::Index layers = 1;

  void validate() const;
};

/// Flattened multi-level value memory: levels stacked along rows in the order
/// {G_r, F_r^3, F_r^2, F_r^1}, all at `channels` width.
struct MultiScaleValueSet {
  Var values;  // [sum_l h_l*w_l, C]
  std::vector<GridShape> shapes;
  std::vector<Eigen::Index> starts;
};

struct QuerySet {
  Var tokens;               // [Lq, C]
  Mat reference_points;     // [Lq, 2], (x, y) normalized
};

/// Cell-center references for an n x n grid in row-major order, plus (0.5, 0.5)
/// for a trailing count query when `with_count`.
Mat reference_points_for(Eigen::Index n, bool with_count);

/// Differentiable multi-scale sampling core. `locations` is [Lq, H*L*K*2] of
/// normalized (x, y) pairs and `weights` is [Lq, H*L*K] of already-normalized
/// attention weights, both indexed by ((h*L + l)*K + k). Head h reads channels
/// [h*C/H, (h+1)*C/H) of `values`.
Var deform_sample(const MultiScaleValueSet& values, const Var& locations, const Var& weights,
                  Eigen::Index heads, Eigen::Index points);

struct DeformAttnParams {
  Linear value_proj;
  Linear offsets;
  Linear logits;
  Linear out_proj;
};

/// Optional inspection hook for tests.
struct DeformTrace {
  Mat attention;   // [Lq, H*L*K] normalized weights
  Mat locations;   // [Lq, H*L*K*2]
};

/// Attention sublayer on values that already went through value_proj:
/// offsets/logits from the query, softmax jointly over the L*K samples of each
/// head, weighted sum of sampled values, output projection.
Var deform_attn_projected(Tape& tape, const QuerySet& queries, const MultiScaleValueSet& values,
                          const DeformAttnParams& p, const DeformConfig& config, DeformTrace* trace = nullptr);

/// value_proj followed by deform_attn_projected.
Var deform_attn_core(Tape& tape, const QuerySet& queries, const MultiScaleValueSet& values,
                     const DeformAttnParams& p, const DeformConfig& config, DeformTrace* trace = nullptr);

struct EnhanceOutput {
  Var o_t;                     // [N^2, C]
  std::optional<Var> o_count;  // [1, C]
};

class DeformableEnhance {
 public:
  /// `level_channels` are the input widths of {G_r, F_r^3, F_r^2, F_r^1}.
  DeformableEnhance(ParamSet& params, std::string prefix, const DeformConfig& config,
                    const std::array<Eigen::Index, 4>& level_channels);

  void init(Rng& rng);

  const DeformConfig& config() const { return config_; }

  /// Per-level affine projection to C channels; `shapes` are the grid shapes of
  /// {G_r, F_r^3, F_r^2, F_r^1}.
  MultiScaleValueSet project_levels(Tape& tape, const std::array<Var, 4>& levels,
                                    const std::array<GridShape, 4>& shapes) const;

  /// Value memory of `layer`: value_proj composed with each level projection,
  /// applied to the raw levels. Equals value_proj(project_levels(...)).
  MultiScaleValueSet layer_values(Tape& tape, int layer, const std::array<Var, 4>& levels,
                                  const std::array<GridShape, 4>& shapes) const;

  /// One decoder layer on `values` from layer_values:
  /// x + core(LN(x)), then x + FFN(LN(x)).
  Var layer_forward(Tape& tape, int layer, const QuerySet& queries, const MultiScaleValueSet& values,
                    DeformTrace* trace = nullptr) const;

  /// Queries [g_t; g_count] against {g_r, f_r3, f_r2, f_r1}.
  EnhanceOutput forward(Tape& tape, const Var& g_t, const Var* g_count, const Var& g_r,
                        const FeaturePyramid& color) const;

  const DeformAttnParams& attn_params(int layer) const { return layers_.at(layer).attn; }
  const Mlp& ffn(int layer) const { return layers_.at(layer).ffn; }
  const Linear& level_projection(int level) const { return level_proj_.at(level); }

 private:
  struct Layer {
    LayerNorm ln1;
    DeformAttnParams attn;
    LayerNorm ln2;
    Mlp ffn;
  };

  DeformConfig config_;
  std::string prefix_;
  std::array<Linear, 4> level_proj_;
  std::vector<Layer> layers_;
};

Eigen::Index deformable_param_count(const DeformConfig& config, const std::array<Eigen::Index, 4>& level_channels);

}  // namespace rgbtcc
