#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mst/image_io.hpp"
#include "mst/run_config.hpp"
#include "mst/trainer.hpp"

namespace mst {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian):
///   "MSCK" | u32 version | u32 len + config text | u64 step | u64 adam steps
///   | u64 rng seed | u64 rng counter | u32 tensor count
///   | per tensor: u32 name len, name, u32 rank, u32 extents, f32 data
/// Tensor names: model parameters, "loss.s_x", "loss.s_q", and
/// "adam.m.<param>" / "adam.v.<param>" for the optimizer moments.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  RunConfig config;
  std::uint64_t step = 0;
  std::uint64_t adam_steps = 0;
  RngState rng;
  std::vector<std::pair<std::string, RawTensor>> tensors;

  const RawTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer, const RunConfig& config);
/// Inference-only checkpoint (no optimizer state).
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const LossParams<float>& loss_params,
                     const RunConfig& config);

/// Reads and validates the whole file; throws FormatError on bad magic,
/// unknown version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies model parameters. Throws CompatibilityError (leaving the model
/// untouched) if the architecture or the parameter set differs.
void restore_model(const Checkpoint& ckpt, Model<float>& model);
/// Restores model, loss parameters, optimizer moments, step counters and RNG.
void restore_trainer(const Checkpoint& ckpt, Trainer& trainer);

}  // namespace mst
