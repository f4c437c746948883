#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evmamba/tensor.hpp"

namespace evm {

struct Dataset {
  Tensor images;            // [K×3×H×W]
  std::vector<int> labels;  // in [0, num_classes)
  std::size_t num_classes = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct SyntheticSpec {
  std::size_t count = 64;
  std::size_t classes = 4;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double noise = 0.1;
};

/// Colored geometric shapes on noise; the label is the shape kind
/// (square, disk, triangle, cross, ring, bar). Classes are balanced.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Directory format: meta.json, images.f32 (raw little-endian float32,
/// K×3×H×W) and labels.u32 (raw little-endian uint32, K).
void save_dataset_dir(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset_dir(const std::filesystem::path& dir);

/// "synthetic[:count=64,classes=4,size=32,seed=0,noise=0.1]" or a dataset
/// directory.
Dataset load_dataset(const std::string& source);

/// Mirror every image left-right.
Tensor flip_horizontal(const Tensor& image);

}  // namespace evm
