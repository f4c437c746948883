#pragma once

#include <cstdint>
#include <random>

#include "evmamba/tensor.hpp"

namespace evm {

/// Seeded generator with a portable uniform mapping, so that seeded runs are
/// reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  /// Standard normal via Box-Muller.
  double normal();

  Tensor uniform_tensor(const Shape& shape, double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

}  // namespace evm
