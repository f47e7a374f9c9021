#pragma once

// Central finite-difference check of the total-loss gradient against the
// reverse-mode gradient, for every parameter of the assembled model.

#include "rgbtcc/config.hpp"

#include <string>
#include <vector>

namespace rgbtcc {

struct GradcheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-3;
  /// Deviations are measured relative to max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Scale of the noise added to every parameter so zero-initialized heads
  /// are checked away from their special starting point.
  double param_noise = 0.05;
  /// Checked entries per parameter tensor; 0 checks all of them.
  Eigen::Index max_entries = 0;
};

struct GradGroupResult {
  std::string group;
  Eigen::Index entries = 0;
  double max_rel_dev = 0.0;
  double max_abs_grad = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradGroupResult> groups;
  double loss = 0.0;
  bool pass = true;
};

/// Small config (64x64 input, 2x2 token grid, 8 channels, 2 heads).
RunConfig gradcheck_config();

/// Group name of a parameter: its name without the final component.
std::string param_group(const std::string& name);

GradcheckReport run_gradcheck(const RunConfig& config, const GradcheckOptions& options = {});
std::string format_gradcheck(const GradcheckReport& report, double rel_tol);

}  // namespace rgbtcc
