#pragma once

// Binary checkpoint: config text and hash, step, every parameter by name and
// the optimizer moments. Doubles are stored as raw IEEE bytes, so a load
// restores values bit-for-bit.

#include "rgbtcc/model.hpp"
#include "rgbtcc/optimizer.hpp"

#include <filesystem>
#include <memory>
#include <optional>

namespace rgbtcc {

struct Checkpoint {
  RunConfig config;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::vector<Param> params;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                     const AdamState* optimizer = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds the model described by the checkpoint and copies its parameters in.
/// Throws on hash mismatch, missing parameters or shape mismatch.
std::unique_ptr<Model> load_model(const Checkpoint& checkpoint);
void copy_params(const std::vector<Param>& source, ParamSet& target);

}  // namespace rgbtcc
