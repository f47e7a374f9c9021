#pragma once

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/layers.hpp"

#include <string>

namespace rgbtcc {

/// Non-negative per-cell person counts on the n x n token grid of an image of
/// size source_height x source_width.
struct DensityMap {
  Mat grid;
  Eigen::Index source_height = 0;
  Eigen::Index source_width = 0;

  Eigen::Index side() const { return grid.rows(); }
};

/// Total predicted count: the mass of the density map.
double predicted_count(const DensityMap& d);

/// conv3x3 (C -> C/2) GELU, conv3x3 (C/2 -> C/4) GELU, conv1x1 (C/4 -> 1), ReLU.
class RegressionHead {
 public:
  /// Initial output bias, roughly the per-cell density of a 20-person scene on a 7x7 grid.
  static constexpr double kInitialCellDensity = 0.4;

  RegressionHead(ParamSet& params, const std::string& prefix, Eigen::Index in_channels);

  void init(Rng& rng);

  /// tokens [n*n, C] -> density [n*n, 1] (row-major cells).
  Var forward(Tape& tape, const Var& tokens, Eigen::Index n) const;

  static Eigen::Index param_count(Eigen::Index c);

 private:
  Eigen::Index channels_;
  Linear conv1_, conv2_, conv3_;
};

/// Affine projection of the count token to a scalar count.
class CountReadout {
 public:
  CountReadout(ParamSet& params, const std::string& prefix, Eigen::Index channels);

  void init(Rng& rng);
  Var forward(Tape& tape, const Var& token) const;
  const Linear& projection() const { return proj_; }

 private:
  Linear proj_;
};

/// Reshapes a [n*n, 1] density column into a DensityMap.
DensityMap to_density_map(const Mat& cells, Eigen::Index n, Eigen::Index source_height, Eigen::Index source_width);

}  // namespace rgbtcc
