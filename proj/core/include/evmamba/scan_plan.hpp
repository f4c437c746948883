#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evmamba/ssm.hpp"
#include "evmamba/tensor.hpp"

namespace evm {

enum class Direction { row_forward, row_backward, col_forward, col_backward };

std::string direction_name(Direction d);

/// One offset group of a skip-sampled grid: pixels (m + r·p, n + c·p).
struct ScanGroup {
  std::size_t offset_m = 0;
  std::size_t offset_n = 0;
  std::size_t rows = 0;  // ceil((H - m) / p)
  std::size_t cols = 0;  // ceil((W - n) / p)
  Direction direction = Direction::row_forward;
  std::vector<std::size_t> traversal;  // flat H·W indices in scan order

  std::size_t size() const { return rows * cols; }
};

/// Four traversal orders over one group; each backward order is the exact
/// reversal of its forward order.
struct DirectionSet {
  std::array<std::vector<std::size_t>, 4> orders;
  const std::vector<std::size_t>& operator[](Direction d) const { return orders[static_cast<int>(d)]; }
};

/// Partition of an H×W grid into p² interleaved groups. Offsets are
/// enumerated row-major over {0..p-1}²; group g scans in direction g mod 4.
struct ScanPlan {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t step = 1;
  std::vector<ScanGroup> groups;

  std::size_t total_tokens() const;
  /// Row-major pixel list of group g (the X[:, m::p, n::p] slice order).
  std::vector<std::size_t> subgrid_pixels(std::size_t g) const;
  DirectionSet directions(std::size_t g) const;
  /// 1-based group id of every pixel, row-major.
  std::vector<std::size_t> group_map() const;
};

/// Literal evaluation of the trigonometric offset expression
///   (⌊1/2 + 1/2·sin(π/2·(i-2))⌋, ⌊1/2 + 1/2·cos(π/2·(i-2))⌋)
/// for i in 1..4. Note that i=4 gives (0,0) again, so this does not
/// partition the grid; build_plan does not use it.
std::pair<std::size_t, std::size_t> offset_formula(int i);

ScanPlan build_plan(std::size_t height, std::size_t width, std::size_t step);

/// Splits x[C×H×W] into one [C×rows×cols] subgrid per group.
std::vector<Tensor> scatter(const Tensor& x, const ScanPlan& plan);

/// Writes every group back to its offsets; inverse of scatter.
Tensor gather(std::span<const Tensor> groups, const ScanPlan& plan);

enum class Combine { sum, mean };

struct ScanOptions {
  /// Scan every group in all four directions instead of one.
  bool full_directions = false;
  /// How multi-direction outputs are combined.
  Combine combine = Combine::sum;
};

/// Selective scan of a token sequence x[L×C] from a zero initial state.
Tensor scan_tokens(const Tensor& tokens, const SsmParams& ssm);

/// Atrous skip-scan: scatter -> scan each group along its direction -> gather.
Tensor es2d(const Tensor& x, const SsmParams& ssm, const ScanPlan& plan, const ScanOptions& opt = {});

/// Baseline 2D selective scan: four full-grid directional scans, combined.
Tensor ss2d(const Tensor& x, const SsmParams& ssm, Combine combine = Combine::sum);

/// Recurrence steps an es2d/ss2d call performs, without running it.
std::size_t es2d_steps(const ScanPlan& plan, const ScanOptions& opt = {});
std::size_t ss2d_steps(std::size_t height, std::size_t width);

}  // namespace evm
