#pragma once

// Run configuration and its flat `key = value` file format. Lines starting
// with '#' and blank lines are ignored; unknown keys are errors.

#include "rgbtcc/backbone.hpp"
#include "rgbtcc/deformable.hpp"
#include "rgbtcc/losses.hpp"
#include "rgbtcc/mst_fusion.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rgbtcc {

enum class Variant { baseline, mst, msd, full, no_count, no_multiscale };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct AblationFlags {
  bool use_mst = true;
  bool use_msd = true;
  bool use_count_token = true;
  bool use_multiscale = true;
};

AblationFlags flags_for(Variant v);

struct OptimizerConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RunConfig {
  Eigen::Index image_size = 224;
  BackboneConfig backbone;
  Eigen::Index fusion_heads = 4;
  Eigen::Index fusion_layers = 2;
  Eigen::Index deform_heads = 4;
  Eigen::Index deform_points = 4;
  Eigen::Index deform_layers = 1;
  LossConfig loss;
  OptimizerConfig optimizer;
  int batch_size = 8;
  int max_steps = 2000;
  int eval_every = 50;
  int patience = 20;
  std::uint64_t seed = 42;
  AblationFlags flags;

  /// Synthetic data generation.
  int train_scenes = 64;
  int val_scenes = 16;
  int test_scenes = 32;
  int min_people = 10;
  int max_people = 30;

  void validate() const;

  Eigen::Index grid_n() const { return image_size / backbone.stage_strides[3]; }
  Eigen::Index channels() const { return backbone.stage_channels[3]; }
  FusionConfig fusion() const;
  DeformConfig deform() const;

  void apply_variant(Variant v) { flags = flags_for(v); }
};

/// Documented keys, in canonical order.
const std::vector<std::string>& config_keys();

/// Applies `key = value` lines on top of `base`. Throws ParseError-style
/// std::runtime_error with the line number on unknown keys or bad values.
RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);
/// FNV-1a of the canonical text.
std::uint64_t config_hash(const RunConfig& config);

}  // namespace rgbtcc
