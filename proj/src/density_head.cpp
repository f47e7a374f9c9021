#include "rgbtcc/density_head.hpp"

#include <stdexcept>

namespace rgbtcc {

double predicted_count(const DensityMap& d) { return d.grid.sum(); }

RegressionHead::RegressionHead(ParamSet& params, const std::string& prefix, Eigen::Index in_channels)
    : channels_(in_channels) {
  if (in_channels < 4) throw std::invalid_argument("regression head: need at least 4 input channels");
  const Eigen::Index c2 = in_channels / 2;
  const Eigen::Index c4 = in_channels / 4;
  conv1_ = Linear(params, prefix + ".conv1", 9 * in_channels, c2);
  conv2_ = Linear(params, prefix + ".conv2", 9 * c2, c4);
  conv3_ = Linear(params, prefix + ".conv3", c4, 1);
}

void RegressionHead::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  // Start every cell in the active region of the output ReLU.
  conv3_.weight->value *= 0.1;
  init_constant(*conv3_.bias, kInitialCellDensity);
}

Var RegressionHead::forward(Tape& tape, const Var& tokens, Eigen::Index n) const {
  if (tokens.rows() != n * n || tokens.cols() != channels_)
    throw std::invalid_argument("regression head: expected [" + std::to_string(n * n) + ", " +
                                std::to_string(channels_) + "] tokens");
  Var x = gelu(conv1_(tape, im2col(tokens, n, n, 3)));
  x = gelu(conv2_(tape, im2col(x, n, n, 3)));
  return relu(conv3_(tape, x));
}

Eigen::Index RegressionHead::param_count(Eigen::Index c) {
  const Eigen::Index c2 = c / 2;
  const Eigen::Index c4 = c / 4;
  return Linear::param_count(9 * c, c2) + Linear::param_count(9 * c2, c4) + Linear::param_count(c4, 1);
}

CountReadout::CountReadout(ParamSet& params, const std::string& prefix, Eigen::Index channels)
    : proj_(params, prefix + ".proj", channels, 1) {}

void CountReadout::init(Rng& rng) { proj_.init(rng); }

Var CountReadout::forward(Tape& tape, const Var& token) const {
  if (token.rows() != 1) throw std::invalid_argument("count readout: expected a single token");
  return proj_(tape, token);
}

DensityMap to_density_map(const Mat& cells, Eigen::Index n, Eigen::Index source_height, Eigen::Index source_width) {
  if (cells.size() != n * n) throw std::invalid_argument("density map: cell count mismatch");
  DensityMap d;
  d.grid = Eigen::Map<const Mat>(cells.data(), n, n);
  d.source_height = source_height;
  d.source_width = source_width;
  return d;
}

}  // namespace rgbtcc
