#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "evmamba/ops.hpp"
#include "evmamba/tape.hpp"
#include "evmamba/tensor.hpp"
#include "evmamba/verify.hpp"

namespace testing {

/// Switches precision for one test and restores it afterwards.
struct Precision64 {
  evm::Precision prev = evm::precision();
  Precision64() { evm::set_precision(evm::Precision::f64); }
  ~Precision64() { evm::set_precision(prev); }
};

inline std::vector<double> values(const evm::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline void check_values(const evm::Tensor& t, const std::vector<double>& expect, double tol = 1e-12) {
  REQUIRE(t.numel() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(t[i] - expect[i]) <= tol * std::max(1.0, std::abs(expect[i])));
  }
}

/// Gradcheck helper: loss = sum(f() ⊙ weights).
inline evm::GradCheckReport check_grad(const std::function<evm::Tensor()>& f, std::vector<evm::Tensor> inputs,
                                       const evm::Tensor& weights, double step = 1e-4) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < inputs.size(); ++i) names.push_back("input" + std::to_string(i));
  return evm::gradcheck([&] { return evm::sum(evm::mul(f(), weights)); }, std::move(inputs), std::move(names), step);
}

}  // namespace testing
