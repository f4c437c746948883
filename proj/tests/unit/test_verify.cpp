#include <doctest.h>

#include <numeric>
#include <sstream>

#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/verify.hpp"
#include "helpers.hpp"

using namespace evm;

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-13, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("gradcheck of sum(identity) is exactly one") {
  testing::Precision64 guard;
  Tensor x = Rng(0).uniform_tensor({3, 2}, -1, 1);
  const auto r = gradcheck([&] { return sum(x); }, {x}, {"x"}, 1e-4);
  CHECK(r.passed());
  CHECK(r.entries[0].analytic == 1.0);
  CHECK(r.entries[0].numeric == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("gradcheck of sum(x*x) is tight") {
  testing::Precision64 guard;
  Tensor x = Rng(1).uniform_tensor({10}, -1, 1);
  const auto r = gradcheck([&] { return sum(mul(x, x)); }, {x}, {"x"}, 1e-5);
  CHECK(r.max_rel_error() < 1e-8);
}

TEST_CASE("gradcheck detects a wrong gradient") {
  testing::Precision64 guard;
  Tensor x = Rng(2).uniform_tensor({4}, 0.5, 1);
  // Loss built outside the tape's knowledge: relu of a detached copy has no
  // recorded path, so analytic gradients are zero while numeric ones are not.
  const auto r = gradcheck([&] { return sum(mul(x.detach(), x.detach())); }, {x}, {"x"});
  CHECK_FALSE(r.passed());
}

TEST_CASE("gradcheck preconditions") {
  Tensor x = Tensor::ones({2});
  set_precision(Precision::f32);
  CHECK_THROWS_AS(gradcheck([&] { return sum(x); }, {x}, {"x"}), Error);
  testing::Precision64 guard;
  CHECK_THROWS_AS(gradcheck([&] { return exp(x); }, {x}, {"x"}), Error);
}

TEST_CASE("naive convolution oracle on the hand example") {
  const auto y = naive_conv_scan({1, 0, 0}, {0.5}, {1}, {1}, 3, 1, 1);
  CHECK(y == std::vector<double>{1, 0.5, 0.25});
}

TEST_CASE("equivalence suite passes and is deterministic") {
  const SuiteReport a = equivalence_suite(0);
  const SuiteReport b = equivalence_suite(0);
  CHECK(a.passed());
  REQUIRE(a.cases.size() == b.cases.size());
  for (std::size_t i = 0; i < a.cases.size(); ++i) CHECK(a.cases[i].metric == b.cases[i].metric);
  std::size_t recurrence = 0;
  for (const auto& c : a.cases) recurrence += c.name.rfind("recurrence", 0) == 0;
  CHECK(recurrence == 100);
}

TEST_CASE("failing report names the seed") {
  SuiteReport r{"demo", 17, {{"x", false, 1.0, "broken"}}};
  std::ostringstream os;
  r.print(os);
  CHECK(os.str().find("seed 17") != std::string::npos);
  CHECK(os.str().find("FAIL x") != std::string::npos);
}
