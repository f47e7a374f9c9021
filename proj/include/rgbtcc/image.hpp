#pragma once

#include "rgbtcc/autodiff.hpp"

#include <cstdint>
#include <random>

namespace rgbtcc {

/// Interleaved image: pixels is [height*width, channels], row-major positions.
struct Image {
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  Mat pixels;

  Image() = default;
  Image(Eigen::Index h, Eigen::Index w, Eigen::Index channels)
      : height(h), width(w), pixels(Mat::Zero(h * w, channels)) {}

  Eigen::Index channels() const { return pixels.cols(); }
  double& at(Eigen::Index y, Eigen::Index x, Eigen::Index c) { return pixels(y * width + x, c); }
  double at(Eigen::Index y, Eigen::Index x, Eigen::Index c) const { return pixels(y * width + x, c); }
};

struct GridShape {
  Eigen::Index height = 0;
  Eigen::Index width = 0;

  Eigen::Index cells() const { return height * width; }
  bool operator==(const GridShape&) const = default;
};

using Rng = std::mt19937_64;

/// Fan-in scaled uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_fan_in_uniform(Param& p, Eigen::Index fan_in, Rng& rng);
void init_uniform(Param& p, double scale, Rng& rng);
void init_constant(Param& p, double value);

}  // namespace rgbtcc
