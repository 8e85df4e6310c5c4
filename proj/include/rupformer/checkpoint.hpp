#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rupformer/kpi_data.hpp"
#include "rupformer/model.hpp"
#include "rupformer/trainer.hpp"

namespace rupf {

/// On-disk layout (little-endian):
///   "RUPF" | u32 version (=1) | u32 header_len | header_len bytes of UTF-8 JSON | payload
/// The JSON header holds hyperparams, train_config, normalizer, the tensor
/// manifest (name, shape, offset, nbytes) and the payload CRC32. The payload is
/// the f32 tensors concatenated in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Hyperparams hyperparams;
  TrainConfig train_config;
  Normalizer normalizer;
  ModelParams params;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rupf
