#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evmamba/model.hpp"

namespace evm {

// Layout (little-endian):
//   "EVSSCKPT" | u32 version | u32 tensor count
//   per tensor: u32 name length | UTF-8 name | u8 rank | u64 extents[rank] | f32 data[numel]
inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
/// Validates magic, version, and that the byte length matches the
/// declared contents exactly.
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, Model& model);
/// Loads into `model` only after every name and shape has been checked;
/// on any error the model is left untouched.
void read_checkpoint(const std::filesystem::path& path, Model& model);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace evm
