#include "rgbtcc/image.hpp"

#include <cmath>

namespace rgbtcc {

void init_fan_in_uniform(Param& p, Eigen::Index fan_in, Rng& rng) {
  init_uniform(p, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void init_uniform(Param& p, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

void init_constant(Param& p, double value) { p.value.setConstant(value); }

}  // namespace rgbtcc
