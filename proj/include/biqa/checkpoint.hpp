#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biqa/net/tensor.hpp"

namespace biqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  net::Tensor<float> tensor;
};

/// Versioned container: metadata document plus named single-precision tensors.
///
/// Layout (little-endian): "BIQACKPT", u32 version, u64 metadata length,
/// metadata bytes (JSON), u32 tensor count, then per tensor u32 name length,
/// name, u32 rank, u64 extents, f32 values; a trailing u32 CRC-32 covers every
/// preceding byte.
struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, std::uint32_t version = kCheckpointVersion);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace biqa
