#pragma once

// Grid Average Mean absolute Error (GAME) and RMSE over per-image counts.
//
// GAME(l) splits every image into a 2^l x 2^l grid of regions, sums the
// absolute regional count errors per image and averages over images.

#include "rgbtcc/density_head.hpp"
#include "rgbtcc/points.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgbtcc {

inline constexpr int kMaxGameLevel = 3;

/// Regional masses of an n x n density map for a 2^l x 2^l region split.
/// Cells straddling a region boundary contribute by overlap area. Regions are
/// indexed row-major (ry * 2^l + rx).
template <typename Derived>
std::vector<typename Derived::Scalar> regional_counts(const Eigen::MatrixBase<Derived>& grid, int level) {
  using Scalar = typename Derived::Scalar;
  if (level < 0 || level > kMaxGameLevel) throw std::invalid_argument("GAME level must be in [0, 3]");
  const Eigen::Index rows = grid.rows();
  const Eigen::Index cols = grid.cols();
  const Eigen::Index regions = Eigen::Index{1} << level;
  // Work in units where a cell spans `regions` and a region spans the grid
  // side, so every boundary sits on an integer coordinate.
  auto overlap = [regions](Eigen::Index cell, Eigen::Index side, Eigen::Index region) {
    const Eigen::Index lo = std::max(cell * regions, region * side);
    const Eigen::Index hi = std::min((cell + 1) * regions, (region + 1) * side);
    return hi > lo ? hi - lo : Eigen::Index{0};
  };
  std::vector<Scalar> out(static_cast<std::size_t>(regions * regions), Scalar(0));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Scalar v = grid(i, j);
      for (Eigen::Index ry = 0; ry < regions; ++ry) {
        const Eigen::Index oy = overlap(i, rows, ry);
        if (oy == 0) continue;
        for (Eigen::Index rx = 0; rx < regions; ++rx) {
          const Eigen::Index ox = overlap(j, cols, rx);
          if (ox == 0) continue;
          out[static_cast<std::size_t>(ry * regions + rx)] +=
              v * static_cast<Scalar>(oy * ox) / static_cast<Scalar>(regions * regions);
        }
      }
    }
  return out;
}

std::vector<double> regional_counts(const DensityMap& d, int level);

/// Points assigned to regions by coordinate; points on the far border fall in
/// the last region.
std::vector<double> regional_counts(const PointList& points, Eigen::Index height, Eigen::Index width, int level);

/// Mean over images of sum_j |pred_j - gt_j| given per-image regional counts.
double game_from_regions(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt);

struct GroundTruth {
  PointList points;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
};

double game(std::span<const DensityMap> preds, std::span<const GroundTruth> gts, int level);

/// sqrt(mean((pred_i - gt_i)^2)) over total counts.
double rmse(std::span<const double> pred_counts, std::span<const double> gt_counts);
double rmse(std::span<const DensityMap> preds, std::span<const GroundTruth> gts);

struct MetricReport {
  std::array<double, kMaxGameLevel + 1> game{};
  double rmse = 0.0;
  std::size_t n_images = 0;
};

MetricReport evaluate_metrics(std::span<const DensityMap> preds, std::span<const GroundTruth> gts);

/// Plain-text table with GAME(0)..GAME(3) and RMSE columns, 2 decimals.
std::string format_metric_table(std::span<const std::string> row_names, std::span<const MetricReport> reports);
/// `key = value` lines: game0..game3, rmse, n_images (full precision).
std::string format_metric_keyvalues(const MetricReport& report);

}  // namespace rgbtcc
