#pragma once

// Synthetic RGB-thermal crowd scenes with point ground truth, plus the file
// formats used to store them:
//   images       binary PPM (P6, RGB) and PGM (P5, thermal), 8-bit
//   annotations  "count <n>" then n lines "x y" in pixel coordinates
//   manifests    optional "# split <name>" / "# seed <n>" header lines, then
//                one "rgb<TAB>thermal<TAB>annotation" triple per line; relative
//                paths resolve against the manifest's directory

#include "rgbtcc/image.hpp"
#include "rgbtcc/points.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgbtcc {

enum class SceneTag { low_light, thermal_clutter, scale_variation };

std::string to_string(SceneTag tag);

struct ScenePair {
  Image rgb;      // [H*W, 3] in [0, 1]
  Image thermal;  // [H*W, 1] in [0, 1]
  PointList points;
  std::set<SceneTag> tags;
};

struct SceneConfig {
  Eigen::Index height = 224;
  Eigen::Index width = 224;
  int min_people = 10;
  int max_people = 30;
  std::set<SceneTag> tags;
  /// RGB attenuation range applied to low_light scenes.
  double low_light_min = 0.05;
  double low_light_max = 0.2;
};

/// Deterministic in `seed`. Throws on sizes not divisible by 32.
ScenePair generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Standard deviation of the RGB luminance; the contrast statistic that
/// separates low-light scenes from normal ones.
double rgb_contrast(const Image& rgb);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

void write_annotation(const std::filesystem::path& path, const PointList& points);
PointList read_annotation(const std::filesystem::path& path);
PointList parse_annotation(const std::string& text, const std::string& source = "<annotation>");
std::string format_annotation(const PointList& points);

/// 8-bit raster I/O. Values are clamped to [0, 1] and rounded to 1/255 steps.
void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);
/// Rounds every value to the nearest 1/255 step, as a write/read cycle would.
Image quantize_8bit(const Image& image);

struct ManifestEntry {
  std::filesystem::path rgb;
  std::filesystem::path thermal;
  std::filesystem::path annotation;
};

struct DatasetManifest {
  std::string split;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Resolves paths and verifies that every referenced file exists.
DatasetManifest read_manifest(const std::filesystem::path& path);

struct SplitSizes {
  int train = 64;
  int val = 16;
  int test = 32;
};

/// Writes <out>/{train,val,test}.tsv and the scene files they reference.
/// Each scene draws its regime tags independently with probability 1/3.
/// Scenes are seeded from `master_seed` and their split/index only.
void generate_dataset(const std::filesystem::path& out_dir, std::uint64_t master_seed, const SplitSizes& sizes,
                      const SceneConfig& base);

/// Seed of scene `index` in `split`, derived from the master seed.
std::uint64_t derive_scene_seed(std::uint64_t master_seed, const std::string& split, int index);

struct Sample {
  Image rgb;
  Image thermal;  // 3-channel encoder input
  PointList points;
  Mat gt_mass;    // n x n binned points
};

/// Loads every manifest entry, replicating thermal to 3 channels and binning
/// points onto an n x n grid.
std::vector<Sample> load_samples(const DatasetManifest& manifest, Eigen::Index grid_n);

}  // namespace rgbtcc
