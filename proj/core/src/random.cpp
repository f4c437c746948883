#include "evmamba/random.hpp"

#include <cmath>
#include <numbers>

namespace evm {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = uniform(lo, hi);
  return make_result(shape, std::move(v));
}

}  // namespace evm
