#include <doctest.h>

#include <cmath>

#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/tape.hpp"
#include "helpers.hpp"

using namespace evm;
using testing::check_values;

TEST_CASE("tensor construction checks") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), Error);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), Error);
  CHECK_THROWS_AS(t.item(), Error);
  CHECK(Tensor::scalar(3).item() == 3);
}

TEST_CASE("precision flag rounds op results to float") {
  testing::Precision64 guard;
  const Tensor a = Tensor::from({1}, {0.1});
  CHECK(add(a, a)[0] == 0.2);
  set_precision(Precision::f32);
  CHECK(add(a, a)[0] == static_cast<double>(0.2f));
}

TEST_CASE("finite check mode reports NaN") {
  set_check_finite(true);
  CHECK_THROWS_AS(exp(Tensor::from({1}, {1e6})), Error);
  set_check_finite(false);
  CHECK(std::isinf(exp(Tensor::from({1}, {1e6}))[0]));
}

TEST_CASE("elementwise examples") {
  testing::Precision64 guard;
  check_values(add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4})), {4, 6});
  check_values(exp(Tensor::from({1}, {0})), {1});
  check_values(sigmoid(Tensor::from({1}, {0})), {0.5});
  check_values(softplus(Tensor::from({1}, {0})), {std::log(2.0)});
  check_values(relu(Tensor::from({3}, {-1, 0, 2})), {0, 0, 2});
  check_values(silu(Tensor::from({1}, {1})), {1.0 / (1.0 + std::exp(-1.0))});
  check_values(mul(Tensor::from({2}, {1, 2}), Tensor::scalar(3)), {3, 6});
  check_values(sub(Tensor::scalar(1), Tensor::from({2}, {1, 2})), {0, -1});
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(elementwise(OpKind::add, Tensor::zeros({2})), Error);
}

TEST_CASE("softplus is stable for large magnitudes") {
  testing::Precision64 guard;
  const Tensor y = softplus(Tensor::from({2}, {800, -800}));
  CHECK(y[0] == doctest::Approx(800));
  CHECK(y[1] >= 0.0);
  CHECK(std::isfinite(y[1]));
}

TEST_CASE("matmul examples") {
  testing::Precision64 guard;
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  check_values(matmul(eye, a), {1, 2, 3, 4}, 0);
  check_values(matmul(a, eye), {1, 2, 3, 4}, 0);
  check_values(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})), {11});
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
}

TEST_CASE("gradient of sum(A·B) wrt A with B = I is ones") {
  testing::Precision64 guard;
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  a.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(matmul(a, eye));
  }
  const Gradients g = tape.backward(loss);
  check_values(g.of(a), {1, 1, 1, 1});
  const auto rep = gradcheck([&] { return sum(matmul(a, eye)); }, {a}, {"a"}, 1e-5);
  CHECK(rep.passed());
}

TEST_CASE("backward examples") {
  testing::Precision64 guard;
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(x);
    }
    tape.backward(loss);
    check_values(x.grad(), {1, 1, 1, 1, 1, 1});
    CHECK(x.grad().shape() == x.shape());
  }
  x.zero_grad();
  Tensor v = Tensor::from({2}, {1, -2});
  v.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(mul(v, v));
  }
  tape.backward(loss);
  check_values(v.grad(), {2, -4});
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({3});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = exp(x);
  }
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("leaf gradients accumulate across tapes") {
  testing::Precision64 guard;
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(scale(x, 3));
    }
    tape.backward(loss);
  }
  check_values(x.grad(), {6, 6});
}

TEST_CASE("no-grad scope records nothing") {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    sum(exp(x));
  }
  CHECK(tape.size() == 0);
  sum(exp(x));
  CHECK(tape.size() == 2);
}

TEST_CASE("tape is topologically ordered") {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor a = exp(x);
  const Tensor b = mul(a, x);
  const Tensor c = sum(b);
  CHECK(tape.size() == 3);
}

TEST_CASE("conv2d examples") {
  testing::Precision64 guard;
  const Tensor ones = Tensor::ones({1, 3, 3});
  const Tensor k = Tensor::ones({1, 1, 3, 3});
  const Tensor y = conv2d(ones, k, nullptr, {1, 1, 1});
  CHECK(y.shape() == Shape{1, 3, 3});
  CHECK(y[4] == 9);
  CHECK(y[0] == 4);

  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  const Tensor sub = conv2d(Tensor({1, 4, 4}, v), Tensor::ones({1, 1, 1, 1}), nullptr, {2, 0, 1});
  CHECK(sub.shape() == Shape{1, 2, 2});
  check_values(sub, {0, 2, 8, 10});
}

TEST_CASE("conv2d output extent rule") {
  const Tensor x = Tensor::zeros({2, 7, 9});
  const Tensor y = conv2d(x, Tensor::zeros({4, 2, 3, 3}), nullptr, {2, 1, 1});
  CHECK(y.shape() == Shape{4, 4, 5});
  const Tensor dw = conv2d(x, Tensor::zeros({2, 1, 3, 3}), nullptr, {1, 1, 2});
  CHECK(dw.shape() == Shape{2, 7, 9});
}

TEST_CASE("conv2d argument errors") {
  const Tensor x = Tensor::zeros({4, 5, 5});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({6, 2, 3, 3}), nullptr, {1, 1, 3}), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 2, 2}), nullptr, {1, 0, 1}), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 3, 3, 3}), nullptr, {1, 1, 1}), Error);
}

TEST_CASE("conv2d 1x1 equals per-pixel matmul") {
  testing::Precision64 guard;
  Rng rng(7);
  const Tensor x = rng.uniform_tensor({3, 8, 8}, -1, 1);
  const Tensor w = rng.uniform_tensor({5, 3, 1, 1}, -1, 1);
  const Tensor y = conv2d(x, w, nullptr, {1, 0, 1});
  // Oracle: W[5×3] · X[3×64] by plain loops.
  for (std::size_t o = 0; o < 5; ++o) {
    for (std::size_t p = 0; p < 64; ++p) {
      double acc = 0;
      for (std::size_t c = 0; c < 3; ++c) acc += w[o * 3 + c] * x[c * 64 + p];
      CHECK(std::abs(y[o * 64 + p] - acc) < 1e-6);
    }
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  testing::Precision64 guard;
  Rng rng(3);
  Tensor x = rng.uniform_tensor({2, 5, 5}, -1, 1);
  Tensor w = rng.uniform_tensor({2, 2, 3, 3}, -1, 1);
  Tensor b = rng.uniform_tensor({2}, -1, 1);
  const Tensor r = rng.uniform_tensor({2, 5, 5}, -1, 1);
  CHECK(testing::check_grad([&] { return conv2d(x, w, &b, {1, 1, 1}); }, {x, w, b}, r).passed());
  const Tensor r2 = rng.uniform_tensor({2, 3, 3}, -1, 1);
  Tensor dw = rng.uniform_tensor({2, 1, 3, 3}, -1, 1);
  CHECK(testing::check_grad([&] { return conv2d(x, dw, nullptr, {2, 1, 2}); }, {x, dw}, r2).passed());
}

TEST_CASE("elementwise and reduction gradients") {
  testing::Precision64 guard;
  Rng rng(11);
  Tensor a = rng.uniform_tensor({3, 4}, -1, 1);
  Tensor b = rng.uniform_tensor({3, 4}, -1, 1);
  const Tensor r = rng.uniform_tensor({3, 4}, -1, 1);
  for (OpKind k : {OpKind::add, OpKind::sub, OpKind::mul}) {
    CHECK(testing::check_grad([&] { return elementwise(k, a, &b); }, {a, b}, r).passed());
  }
  for (OpKind k : {OpKind::exp, OpKind::sigmoid, OpKind::silu, OpKind::softplus}) {
    CHECK(testing::check_grad([&] { return elementwise(k, a); }, {a}, r).passed());
  }
  Tensor s = Tensor::from({1}, {0.7});
  CHECK(testing::check_grad([&] { return mul(a, s); }, {a, s}, r).passed());
  const std::size_t ax[] = {1};
  CHECK(testing::check_grad([&] { return reduce(ReduceKind::mean, a, ax); }, {a}, Tensor::from({3}, {1, -2, 3}))
            .passed());
}

TEST_CASE("reductions") {
  testing::Precision64 guard;
  CHECK(mean(Tensor::from({2, 2}, {1, 2, 3, 4})).item() == 2.5);
  const std::size_t axes_bad[] = {2};
  CHECK_THROWS_AS(reduce(ReduceKind::sum, Tensor::zeros({2, 2}), axes_bad), Error);
  const std::size_t axes_dup[] = {0, 0};
  CHECK_THROWS_AS(reduce(ReduceKind::sum, Tensor::zeros({2, 2}), axes_dup), Error);
  CHECK_THROWS_AS(reduce(ReduceKind::sum, Tensor::zeros({2, 2}), std::span<const std::size_t>{}), Error);
  const Tensor g = global_avg_pool(Tensor::full({3, 4, 5}, 2.5));
  check_values(g, {2.5, 2.5, 2.5});
  const std::size_t ax0[] = {0};
  check_values(reduce(ReduceKind::sum, Tensor::from({2, 2}, {1, 2, 3, 4}), ax0), {4, 6});
}

TEST_CASE("softmax rows are positive and sum to one") {
  testing::Precision64 guard;
  Rng rng(5);
  const Tensor logits = rng.uniform_tensor({6, 10}, -20, 20);
  const Tensor p = softmax(logits);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(p[r * 10 + c] > 0);
      s += p[r * 10 + c];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("cross entropy value and gradient") {
  testing::Precision64 guard;
  const Tensor logits = Tensor::from({2, 3}, {0, 0, 0, 1, 2, 3});
  const int labels[] = {0, 2};
  const double l1 = std::log(3.0);
  const double l2 = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx((l1 + l2) / 2));
  Tensor x = Rng(1).uniform_tensor({2, 3}, -1, 1);
  CHECK(gradcheck([&] { return cross_entropy(x, labels); }, {x}, {"logits"}).passed());
  const int bad[] = {0, 3};
  CHECK_THROWS_AS(cross_entropy(logits, bad), Error);
}

TEST_CASE("layer norm over channels and its gradient") {
  testing::Precision64 guard;
  Rng rng(2);
  Tensor x = rng.uniform_tensor({4, 3, 3}, -1, 1);
  Tensor w = rng.uniform_tensor({4}, 0.5, 1.5);
  Tensor b = rng.uniform_tensor({4}, -0.5, 0.5);
  const Tensor y = layer_norm_channels(x, Tensor::ones({4}), Tensor::zeros({4}));
  for (std::size_t p = 0; p < 9; ++p) {
    double m = 0;
    for (std::size_t c = 0; c < 4; ++c) m += y[c * 9 + p];
    CHECK(std::abs(m) < 1e-12);
  }
  const Tensor r = rng.uniform_tensor({4, 3, 3}, -1, 1);
  CHECK(testing::check_grad([&] { return layer_norm_channels(x, w, b); }, {x, w, b}, r).passed());
}

TEST_CASE("index ops round trip and gradients") {
  testing::Precision64 guard;
  Rng rng(4);
  Tensor x = rng.uniform_tensor({2, 3, 3}, -1, 1);
  const std::vector<std::size_t> pix = {8, 0, 4};
  const Tensor taken = spatial_take(x, pix, true);
  CHECK(taken.shape() == Shape{3, 2});
  CHECK(taken[0] == x[8]);
  CHECK(taken[1] == x[9 + 8]);
  const Tensor r = rng.uniform_tensor({3, 2}, -1, 1);
  CHECK(testing::check_grad([&] { return spatial_take(x, pix, true); }, {x}, r).passed());
  const Tensor s = stack(std::vector<Tensor>{x, x});
  CHECK(s.shape() == Shape{2, 2, 3, 3});
  CHECK(max_abs_diff(select(s, 1), x) == 0);
}
