#pragma once

#include "rgbtcc/density_head.hpp"

#include <filesystem>
#include <string>

namespace rgbtcc {

/// Writes `path` as an 8-bit PGM of the max-normalized map, each cell drawn
/// as a block so the raster matches the source image size, and
/// `<path>.txt` with the predicted count and the regional counts of every
/// GAME level.
void render_density(const DensityMap& d, const std::filesystem::path& path);

/// Sidecar text for `d`.
std::string density_summary(const DensityMap& d);

}  // namespace rgbtcc
