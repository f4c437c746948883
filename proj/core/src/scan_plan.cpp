#include "evmamba/scan_plan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evmamba/ops.hpp"

namespace evm {

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::row_forward: return "row-forward";
    case Direction::row_backward: return "row-backward";
    case Direction::col_forward: return "col-forward";
    case Direction::col_backward: return "col-backward";
  }
  return "?";
}

namespace {

std::vector<std::size_t> order_for(const ScanPlan& plan, const ScanGroup& g, Direction d) {
  std::vector<std::size_t> out;
  out.reserve(g.size());
  const bool by_rows = d == Direction::row_forward || d == Direction::row_backward;
  if (by_rows) {
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c)
        out.push_back((g.offset_m + r * plan.step) * plan.width + g.offset_n + c * plan.step);
  } else {
    for (std::size_t c = 0; c < g.cols; ++c)
      for (std::size_t r = 0; r < g.rows; ++r)
        out.push_back((g.offset_m + r * plan.step) * plan.width + g.offset_n + c * plan.step);
  }
  if (d == Direction::row_backward || d == Direction::col_backward) std::reverse(out.begin(), out.end());
  return out;
}

void check_plan_matches(const Tensor& x, const ScanPlan& plan) {
  if (x.rank() != 3 || x.dim(1) != plan.height || x.dim(2) != plan.width) {
    throw Error("scan plan for " + std::to_string(plan.height) + "x" + std::to_string(plan.width) +
                " does not match input " + shape_str(x.shape()));
  }
}

}  // namespace

std::size_t ScanPlan::total_tokens() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

std::vector<std::size_t> ScanPlan::subgrid_pixels(std::size_t g) const {
  return order_for(*this, groups.at(g), Direction::row_forward);
}

DirectionSet ScanPlan::directions(std::size_t g) const {
  const ScanGroup& grp = groups.at(g);
  DirectionSet set;
  for (int d = 0; d < 4; ++d) set.orders[d] = order_for(*this, grp, static_cast<Direction>(d));
  return set;
}

std::vector<std::size_t> ScanPlan::group_map() const {
  std::vector<std::size_t> map(height * width, 0);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (auto pix : groups[g].traversal) map[pix] = g + 1;
  return map;
}

std::pair<std::size_t, std::size_t> offset_formula(int i) {
  if (i < 1 || i > 4) throw Error("offset_formula: group index must be in 1..4, got " + std::to_string(i));
  const double angle = std::numbers::pi / 2.0 * static_cast<double>(i - 2);
  const double m = std::floor(0.5 + 0.5 * std::sin(angle));
  const double n = std::floor(0.5 + 0.5 * std::cos(angle));
  return {static_cast<std::size_t>(m), static_cast<std::size_t>(n)};
}

ScanPlan build_plan(std::size_t height, std::size_t width, std::size_t step) {
  if (height == 0 || width == 0) throw Error("build_plan: grid extents must be >= 1");
  if (step == 0 || step > std::min(height, width)) {
    throw Error("build_plan: skip step " + std::to_string(step) + " must lie in [1, " +
                std::to_string(std::min(height, width)) + "]");
  }
  ScanPlan plan;
  plan.height = height;
  plan.width = width;
  plan.step = step;
  for (std::size_t m = 0; m < step; ++m)
    for (std::size_t n = 0; n < step; ++n) {
      ScanGroup g;
      g.offset_m = m;
      g.offset_n = n;
      g.rows = (height - m + step - 1) / step;
      g.cols = (width - n + step - 1) / step;
      g.direction = static_cast<Direction>(plan.groups.size() % 4);
      g.traversal = order_for(plan, g, g.direction);
      plan.groups.push_back(std::move(g));
    }
  return plan;
}

std::vector<Tensor> scatter(const Tensor& x, const ScanPlan& plan) {
  check_plan_matches(x, plan);
  std::vector<Tensor> out;
  out.reserve(plan.groups.size());
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto pixels = plan.subgrid_pixels(g);
    out.push_back(spatial_take(x, pixels, false, plan.groups[g].rows, plan.groups[g].cols));
  }
  return out;
}

Tensor gather(std::span<const Tensor> groups, const ScanPlan& plan) {
  if (groups.size() != plan.groups.size()) {
    throw Error("gather: plan has " + std::to_string(plan.groups.size()) + " groups, got " +
                std::to_string(groups.size()));
  }
  const std::size_t channels = groups.empty() ? 0 : groups[0].dim(0);
  std::vector<std::vector<std::size_t>> pixels;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Shape expect{channels, plan.groups[g].rows, plan.groups[g].cols};
    if (groups[g].shape() != expect) {
      throw Error("gather: group " + std::to_string(g) + " has shape " + shape_str(groups[g].shape()) +
                  ", plan expects " + shape_str(expect));
    }
    pixels.push_back(plan.subgrid_pixels(g));
  }
  return spatial_merge(groups, pixels, false, channels, plan.height, plan.width);
}

Tensor scan_tokens(const Tensor& tokens, const SsmParams& ssm) {
  const DiscreteParams dp = select_params(tokens, ssm);
  return selective_scan(tokens, dp, Tensor::zeros({ssm.channels, ssm.state_dim}));
}

Tensor es2d(const Tensor& x, const SsmParams& ssm, const ScanPlan& plan, const ScanOptions& opt) {
  check_plan_matches(x, plan);
  if (x.dim(0) != ssm.channels) {
    throw Error("es2d: input has " + std::to_string(x.dim(0)) + " channels, SSM expects " +
                std::to_string(ssm.channels));
  }
  std::vector<Tensor> parts;
  std::vector<std::vector<std::size_t>> orders;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    if (opt.full_directions) {
      const DirectionSet set = plan.directions(g);
      for (const auto& order : set.orders) orders.push_back(order);
    } else {
      orders.push_back(plan.groups[g].traversal);
    }
  }
  parts.reserve(orders.size());
  for (const auto& order : orders) parts.push_back(scan_tokens(spatial_take(x, order, true), ssm));
  Tensor merged = spatial_merge(parts, orders, true, x.dim(0), plan.height, plan.width);
  if (opt.full_directions && opt.combine == Combine::mean) merged = scale(merged, 0.25);
  return merged;
}

Tensor ss2d(const Tensor& x, const SsmParams& ssm, Combine combine) {
  if (x.rank() != 3) throw Error("ss2d: expected [C×H×W], got " + shape_str(x.shape()));
  const ScanPlan plan = build_plan(x.dim(1), x.dim(2), 1);
  return es2d(x, ssm, plan, ScanOptions{true, combine});
}

std::size_t es2d_steps(const ScanPlan& plan, const ScanOptions& opt) {
  return plan.total_tokens() * (opt.full_directions ? 4 : 1);
}

std::size_t ss2d_steps(std::size_t height, std::size_t width) { return 4 * height * width; }

}  // namespace evm
