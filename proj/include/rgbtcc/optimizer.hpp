#pragma once

// Adaptive-moment optimizer with decoupled weight decay.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/config.hpp"

#include <cstdint>
#include <vector>

namespace rgbtcc {

/// First and second moment estimates, aligned with ParamSet iteration order.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;
};

class AdamW {
 public:
  AdamW(ParamSet& params, const OptimizerConfig& config);

  /// Applies one update from the gradients currently stored in the params.
  void step();

  const AdamState& state() const { return state_; }
  /// Throws if the moment shapes do not match the parameter set.
  void set_state(AdamState state);

 private:
  ParamSet& params_;
  OptimizerConfig config_;
  AdamState state_;
};

}  // namespace rgbtcc
