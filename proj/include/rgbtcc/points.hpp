#pragma once

#include "rgbtcc/autodiff.hpp"

#include <vector>

namespace rgbtcc {

/// Head annotation in pixel coordinates.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using PointList = std::vector<Point>;

/// Each point adds mass 1 to the cell of the n x n grid (over an image of
/// height x width pixels) that contains it. Points on the far border are
/// clamped into the last cell.
Mat bin_points_to_grid(const PointList& points, Eigen::Index height, Eigen::Index width, Eigen::Index n);

}  // namespace rgbtcc
