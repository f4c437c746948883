#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "evmamba/tensor.hpp"

namespace evm {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at the worst index
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0.0;
  double threshold = 0.0;
  double max_rel_error() const;
  bool passed() const { return max_rel_error() < threshold; }
};

/// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

using LossFn = std::function<Tensor()>;

/// Central-difference check of `loss` against the tape gradient for every
/// scalar of every input. `loss` must read the inputs' current values and
/// return a single-element tensor. Requires 64-bit precision.
GradCheckReport gradcheck(const LossFn& loss, std::vector<Tensor> inputs, std::vector<std::string> names,
                          double step = 1e-4, double threshold = 1e-4);

struct SuiteCase {
  std::string name;
  bool passed = false;
  double metric = 0.0;  // worst error or mismatch count
  std::string detail;
};

struct SuiteReport {
  std::string title;
  std::uint64_t seed = 0;
  std::vector<SuiteCase> cases;
  bool passed() const;
  std::size_t failures() const;
  void print(std::ostream& os, bool verbose = false) const;
};

/// Naive O(L²) causal convolution of a time-invariant scan, computed
/// directly from powers of A_bar (independent of conv_kernel_form).
std::vector<double> naive_conv_scan(const std::vector<double>& x, const std::vector<double>& a_bar,
                                    const std::vector<double>& b_bar, const std::vector<double>& c_bar,
                                    std::size_t length, std::size_t channels, std::size_t states);

/// Recurrence vs convolution on `count` random time-invariant instances.
SuiteReport recurrence_equivalence(std::uint64_t seed, std::size_t count = 100, double tol = 1e-10);
/// gather(scatter(x)) == x and partition checks over {3..9}²×{1..3}.
SuiteReport partition_roundtrips(std::uint64_t seed, std::size_t count = 100);
/// Counted recurrence steps of es2d/ss2d against H·W and 4·H·W.
SuiteReport step_audit(std::uint64_t seed);
/// All three of the above.
SuiteReport equivalence_suite(std::uint64_t seed = 0);

/// Gradient checks of selective_scan, se_gate, InRes, EVSS and a stacked
/// EVSS+InRes pair at tiny sizes.
SuiteReport gradcheck_suite(std::uint64_t seed = 0, double step = 1e-4, double threshold = 1e-4);

}  // namespace evm
