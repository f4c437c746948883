#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "evmamba/checkpoint.hpp"
#include "evmamba/data.hpp"
#include "evmamba/train.hpp"
#include "helpers.hpp"

using namespace evm;
namespace fs = std::filesystem;

namespace {

ModelSpec toy(std::size_t classes = 4) {
  ModelSpec s;
  s.name = "toy";
  s.dims = {8, 16, 32, 64};
  s.depths = {1, 1, 1, 1};
  s.num_classes = classes;
  s.input_resolution = 32;
  s.state_dim = 4;
  return s;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  const CosineSchedule s(0.01, 10, 100);
  CHECK(s.at(0) == doctest::Approx(0.01 / 10));
  CHECK(s.at(9) == doctest::Approx(0.01));
  CHECK(s.at(10) == doctest::Approx(0.01));
  CHECK(s.at(55) == doctest::Approx(0.005));
  CHECK(std::abs(s.at(99)) < 0.01 * 1e-3);
  CHECK(std::abs(s.at(100)) < 1e-9);
  for (std::size_t i = 10; i < 100; ++i) CHECK(s.at(i + 1) <= s.at(i));
  CHECK(CosineSchedule(0.5, 0, 4).at(0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(CosineSchedule(0.1, 5, 4), Error);
}

TEST_CASE("adamw first step moves by lr against the gradient sign") {
  Tensor w = Tensor::from({2, 1}, {0.5, -0.5});
  Tensor b = Tensor::from({1}, {0.25});
  AdamW opt({{"w", w}, {"b", b}}, {0.9, 0.999, 1e-8, 0.0});
  w.node()->grad = {2.0, -3.0};
  b.node()->grad = {1.0};
  opt.step(0.1);
  CHECK(w[0] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-0.4).epsilon(1e-6));
  CHECK(b[0] == doctest::Approx(0.15).epsilon(1e-6));
}

TEST_CASE("adamw decays matrices but not biases") {
  Tensor w = Tensor::from({1, 1}, {1.0});
  Tensor b = Tensor::from({1}, {1.0});
  Tensor a = Tensor::from({1, 1}, {1.0});
  AdamW opt({{"w", w}, {"bias", b}, {"blk.ssm.a_log", a}}, {0.9, 0.999, 1e-8, 0.5});
  opt.step(0.1);
  CHECK(w[0] == doctest::Approx(0.95));
  CHECK(b[0] == 1.0);
  CHECK(a[0] == 1.0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.epochs = 3;
  c.warmup_epochs = 4;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("synthetic data is deterministic and balanced") {
  const Dataset a = make_synthetic({64, 4, 32, 3, 0.1});
  const Dataset b = make_synthetic({64, 4, 32, 3, 0.1});
  CHECK(a.images.shape() == Shape{64, 3, 32, 32});
  CHECK(testing::values(a.images) == testing::values(b.images));
  std::vector<int> counts(4);
  for (int l : a.labels) counts.at(static_cast<std::size_t>(l)) += 1;
  CHECK(counts == std::vector<int>{16, 16, 16, 16});
  const Dataset c = make_synthetic({64, 4, 32, 4, 0.1});
  CHECK(testing::values(a.images) != testing::values(c.images));
  CHECK_THROWS_AS(make_synthetic({64, 9, 32, 0, 0.1}), Error);
}

TEST_CASE("dataset sources") {
  const Dataset d = load_dataset("synthetic:count=8,classes=2,size=32,seed=1");
  CHECK(d.size() == 8);
  CHECK(d.num_classes == 2);
  CHECK_THROWS_AS(load_dataset("synthetic:count=x"), Error);
  CHECK_THROWS_AS(load_dataset("synthetic:colour=3"), Error);
  CHECK_THROWS_AS(load_dataset("/nonexistent/dataset"), Error);

  const fs::path dir = fs::temp_directory_path() / "evmamba_unit" / "dataset";
  fs::remove_all(dir);
  save_dataset_dir(d, dir);
  const Dataset back = load_dataset(dir.string());
  CHECK(back.labels == d.labels);
  CHECK(testing::values(back.images) == testing::values(d.images));
}

TEST_CASE("horizontal flip mirrors columns") {
  const Tensor img = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  testing::check_values(flip_horizontal(img), {3, 2, 1, 6, 5, 4});
}

TEST_CASE("random-init accuracy sits near chance") {
  const Dataset d = make_synthetic({64, 4, 32, 0, 0.1});
  for (std::uint64_t seed : {0, 1, 2}) {
    const Model m = Model::build(toy(), seed);
    const EvalReport r = evaluate(m, d);
    CHECK(r.total == 64);
    CHECK(r.accuracy() >= 0.10);
    CHECK(r.accuracy() <= 0.40);
    std::size_t sum = 0;
    for (const auto& row : r.confusion) {
      for (auto v : row) sum += v;
    }
    CHECK(sum == 64);
  }
}

TEST_CASE("training is reproducible and evaluation matches the log") {
  testing::Precision64 guard;
  const Dataset d = make_synthetic({16, 2, 32, 0, 0.1});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 8;
  cfg.lr = 2e-3;
  cfg.warmup_epochs = 1;
  std::ostringstream log1, log2;
  Model a = Model::build(toy(2), 1);
  Model b = Model::build(toy(2), 1);
  const auto m1 = train(a, d, cfg, &log1);
  train(b, d, cfg, &log2);
  CHECK(log1.str() == log2.str());
  CHECK(log1.str().rfind("epoch,loss,acc,lr\n", 0) == 0);
  CHECK(m1.size() == 3);
  CHECK(std::abs(m1.back().lr) < 1e-3);

  const fs::path ckpt = fs::temp_directory_path() / "evmamba_unit" / "trained.ckpt";
  fs::create_directories(ckpt.parent_path());
  write_checkpoint(ckpt, a);
  Model c = Model::build(toy(2), 99);
  read_checkpoint(ckpt, c);
  CHECK(evaluate(c, d).accuracy() == m1.back().acc);
}

TEST_CASE("training aborts on a non-finite loss") {
  const Dataset d = make_synthetic({8, 2, 32, 0, 0.1});
  Model m = Model::build(toy(2), 0);
  auto params = m.named_parameters();
  params.back().second.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(m, d, cfg), Error);
}

TEST_CASE("class count mismatch is rejected") {
  const Dataset d = make_synthetic({8, 2, 32, 0, 0.1});
  Model m = Model::build(toy(4), 0);
  CHECK_THROWS_AS(evaluate(m, d), Error);
  CHECK_THROWS_AS(train(m, d, TrainConfig{}), Error);
}
