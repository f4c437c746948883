#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evmamba/model.hpp"

namespace evm {

struct ProfileEntry {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t scan_steps = 0;
};

/// Analytic parameter and multiply-accumulate tallies. Totals are exact
/// sums of the entries.
struct ProfileReport {
  std::string model_name;
  std::size_t input_height = 0;
  std::size_t input_width = 0;
  std::vector<ProfileEntry> entries;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_scan_steps = 0;

  void add(ProfileEntry e);
  /// Sum over entries whose name starts with `prefix`.
  ProfileEntry subtotal(const std::string& prefix) const;
};

std::uint64_t conv_params(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups, bool bias = true);
std::uint64_t conv_macs(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups, std::size_t out_h,
                        std::size_t out_w);
/// Per scanned token: B/C/Δ projections plus the state update and readout.
std::uint64_t scan_macs_per_step(std::size_t channels, std::size_t state_dim);

ProfileReport profile(Model& model, std::size_t height, std::size_t width);

/// Published budget of a named variant.
struct BudgetTarget {
  double params_millions;
  double gflops;
};
std::optional<BudgetTarget> budget_target(const std::string& variant);

/// Signed percentage deviation of `actual` from `target`.
double deviation_percent(double actual, double target);

std::string format_profile(const ProfileReport& report, bool per_layer);

}  // namespace evm
