#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "symdiff/denoiser.hpp"
#include "symdiff/trainer.hpp"

namespace symdiff {

// Container layout (little-endian):
//   "SDCKPT\0\0", u32 version, u64 header length, JSON header,
//   f32 parameters, then (if present) f32 Adam first and second moments.
// The header names every tensor with its shape and offset.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Denoiser model;
  std::optional<AdamState> optimizer;
  std::int64_t train_step = 0;
  std::string rng_state;  // empty when not saved from a trainer
  TrainOptions options;
};

Checkpoint make_checkpoint(const Trainer& trainer);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// `expected`, when given, must equal the stored configuration; otherwise
// Error(kShapeMismatch). Truncation gives ParseError, an unknown version
// Error(kVersionMismatch).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const DenoiserConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, const DenoiserConfig* expected = nullptr);

// Rebuilds a trainer that continues exactly where the checkpoint stopped.
Trainer resume_trainer(const Checkpoint& ckpt);

}  // namespace symdiff
