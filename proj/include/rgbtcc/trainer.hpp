#pragma once

// Training loop, evaluation and the ablation sweep.

#include "rgbtcc/checkpoint.hpp"
#include "rgbtcc/losses.hpp"
#include "rgbtcc/metrics.hpp"
#include "rgbtcc/model.hpp"
#include "rgbtcc/synthdata.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgbtcc {

/// Raised when a step produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, const LossReport& report, const std::string& detail);
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainOptions {
  /// Append-only per-step log ("step loss count ot tv ctoken"); optional.
  std::ostream* log = nullptr;
  /// Progress lines for validation; optional.
  std::ostream* progress = nullptr;
  /// Written at the end of training with the restored best parameters.
  std::optional<std::filesystem::path> checkpoint;
  /// Stop once the mean training GAME(0) measured at an evaluation drops
  /// below this value (used by the overfit check). Disabled when negative.
  double stop_below_train_game0 = -1.0;
};

struct TrainResult {
  int steps = 0;
  double best_val_game0 = 0.0;
  int best_step = 0;
  bool early_stopped = false;
  LossReport last;
};

/// Mean losses over one batch, with gradients accumulated into the params.
LossReport accumulate_batch(const Model& model, std::span<const Sample* const> batch);

/// Trains `model` in place. When `val` is non-empty, validation GAME(0) is
/// measured every eval_every steps, training stops after `patience`
/// evaluations without improvement and the best parameters are restored.
TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val,
                  const TrainOptions& options = {});

struct Predictions {
  std::vector<DensityMap> maps;
  std::vector<GroundTruth> truth;
};

Predictions predict_all(const Model& model, std::span<const Sample> samples);
MetricReport evaluate(const Model& model, std::span<const Sample> samples);

struct AblationRow {
  Variant variant;
  Eigen::Index param_count = 0;
  TrainResult training;
  MetricReport test;
};

/// Variants in table order: the four module variants, then -count and
/// -multiscale.
std::vector<Variant> ablation_variants();

/// Trains and evaluates every variant in `variants` from the same seed.
std::vector<AblationRow> ablate(const RunConfig& config, std::span<const Variant> variants,
                                std::span<const Sample> train_set, std::span<const Sample> val,
                                std::span<const Sample> test, std::ostream* progress = nullptr);

std::string format_ablation_table(std::span<const AblationRow> rows);

}  // namespace rgbtcc
