#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evmamba/blocks.hpp"

namespace evm {

/// Declarative description of a four-stage backbone.
struct ModelSpec {
  std::string name = "custom";
  std::array<std::size_t, 4> dims{48, 96, 192, 384};
  std::array<std::size_t, 4> depths{2, 2, 4, 2};
  Layout layout = Layout::inverted;
  std::size_t skip_step = 2;
  std::size_t num_classes = 1000;
  std::size_t input_resolution = 224;
  std::size_t state_dim = 16;
  std::size_t se_reduction = 4;
  std::size_t expansion = 4;
  std::size_t stem_width = 16;  // hidden width between the two stem convolutions
  bool fusion = true;
  bool outer_residual = false;
  ScanMode scan = ScanMode::es2d;
  bool full_directions = false;
  Combine combine = Combine::sum;

  /// Preset "T", "S" or "B".
  static ModelSpec variant(std::string_view name);
  void validate() const;
  /// Config of the blocks in 1-based stage `stage`.
  BlockConfig block_config(int stage) const;

  bool operator==(const ModelSpec&) const = default;
};

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(std::string_view text);
/// "T"/"S"/"B" or the path of a JSON config file.
ModelSpec resolve_spec(const std::string& name_or_path);

/// Spatial extents observed during a forward pass: stem, stage 1..4.
struct ForwardTrace {
  std::vector<std::size_t> resolutions;
};

class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  /// x[B×3×H×W] -> logits[B×num_classes]; H and W must be multiples of 32.
  Tensor forward(const Tensor& x, ForwardTrace* trace = nullptr) const;
  /// image[3×H×W] -> logits[num_classes].
  Tensor forward_one(const Tensor& image, ForwardTrace* trace = nullptr) const;

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::size_t parameter_count();

  struct Stage {
    std::optional<ConvLayer> downsample;  // 3×3 stride 2
    std::vector<Block> blocks;
  };

  const StemParams& stem_params() const { return stem_; }
  const Stage& stage(std::size_t i) const { return stages_.at(i); }
  const Tensor& head_weight() const { return head_weight_; }

 private:
  ModelSpec spec_;
  StemParams stem_;
  std::array<Stage, 4> stages_;
  Tensor head_weight_;  // [dims3×num_classes]
  Tensor head_bias_;    // [num_classes]
};

}  // namespace evm
