#include <doctest.h>

#include <cmath>
#include <sstream>

#include "evmamba/blocks.hpp"
#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "helpers.hpp"

using namespace evm;

namespace {

BlockConfig evss_cfg(std::size_t c) {
  BlockConfig cfg;
  cfg.kind = BlockKind::evss;
  cfg.channels_in = cfg.channels_out = c;
  cfg.state_dim = 4;
  return cfg;
}

BlockConfig inres_cfg(std::size_t cin, std::size_t cout, std::size_t stride) {
  BlockConfig cfg;
  cfg.kind = BlockKind::inres;
  cfg.channels_in = cin;
  cfg.channels_out = cout;
  cfg.stride = stride;
  return cfg;
}

}  // namespace

TEST_CASE("stage rule") {
  CHECK(stage_rule(1, Layout::inverted) == BlockKind::evss);
  CHECK(stage_rule(2, Layout::inverted) == BlockKind::evss);
  CHECK(stage_rule(3, Layout::inverted) == BlockKind::inres);
  CHECK(stage_rule(4, Layout::inverted) == BlockKind::inres);
  CHECK(stage_rule(1, Layout::previous) == BlockKind::inres);
  CHECK(stage_rule(3, Layout::previous) == BlockKind::evss);
  for (int s = 1; s <= 4; ++s) {
    CHECK(stage_rule(s, Layout::all_evss) == BlockKind::evss);
    CHECK(stage_rule(s, Layout::all_inres) == BlockKind::inres);
  }
  CHECK_THROWS_AS(stage_rule(0, Layout::inverted), Error);
  CHECK_THROWS_AS(stage_rule(5, Layout::inverted), Error);
  CHECK(parse_layout("all-evss") == Layout::all_evss);
  CHECK_THROWS_AS(parse_layout("sideways"), Error);
}

TEST_CASE("block config invariants") {
  BlockConfig c = inres_cfg(8, 8, 1);
  CHECK(c.squeezed_width() == 4);
  c.channels_in = 64;
  CHECK(c.squeezed_width() == 16);
  CHECK(inres_cfg(8, 8, 1).has_shortcut());
  CHECK_FALSE(inres_cfg(8, 16, 1).has_shortcut());
  CHECK_FALSE(inres_cfg(8, 8, 2).has_shortcut());
  CHECK_THROWS_AS(inres_cfg(8, 8, 3).validate(), Error);
  BlockConfig e = evss_cfg(8);
  e.channels_out = 16;
  CHECK_THROWS_AS(e.validate(), Error);
}

TEST_CASE("se gate examples") {
  testing::Precision64 guard;
  Rng rng(0);
  const Tensor x = rng.uniform_tensor({4, 3, 3}, -2, 2);
  const Tensor half = se_gate(x, SeParams::zeros(4, 4));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(half[i] == doctest::Approx(x[i] / 2));
  const SeParams p = SeParams::init(4, 4, rng);
  for (double v : testing::values(se_gate(Tensor::zeros({4, 3, 3}), p))) CHECK(v == 0.0);
  CHECK_THROWS_AS(se_gate(Tensor::zeros({3, 3, 3}), p), Error);
}

TEST_CASE("se gates lie in (0,1) and never enlarge the input") {
  testing::Precision64 guard;
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const SeParams p = SeParams::init(6, 4, rng);
    const Tensor x = rng.uniform_tensor({6, 4, 4}, -3, 3);
    for (double g : testing::values(se_gate_values(x, p))) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
    double in_max = 0, out_max = 0;
    for (double v : x.data()) in_max = std::max(in_max, std::abs(v));
    for (double v : testing::values(se_gate(x, p))) out_max = std::max(out_max, std::abs(v));
    CHECK(out_max <= in_max);
  }
}

TEST_CASE("evss null branches give zero output") {
  const BlockConfig cfg = evss_cfg(4);
  EvssParams p = EvssParams::zeros(cfg);
  const Tensor x = Rng(3).uniform_tensor({4, 6, 6}, -1, 1);
  for (double v : testing::values(evss_block(x, cfg, p))) CHECK(v == 0.0);
}

TEST_CASE("evss preserves shape") {
  Rng rng(4);
  for (std::size_t c : {8, 16}) {
    for (std::size_t hw : {8, 14, 56}) {
      const BlockConfig cfg = evss_cfg(c);
      const EvssParams p = EvssParams::init(cfg, rng);
      const Tensor x = rng.uniform_tensor({c, hw, hw}, -1, 1);
      CHECK(evss_block(x, cfg, p).shape() == x.shape());
    }
  }
}

TEST_CASE("evss without fusion is norm, scan, SE") {
  testing::Precision64 guard;
  Rng rng(5);
  BlockConfig cfg = evss_cfg(4);
  cfg.fusion = false;
  cfg.skip_step = 1;
  EvssParams p = EvssParams::init(cfg, rng);
  p.norm_weight = rng.uniform_tensor({4}, 0.5, 1.5);
  p.norm_bias = rng.uniform_tensor({4}, -0.5, 0.5);
  const Tensor x = rng.uniform_tensor({4, 5, 5}, -1, 1);
  const Tensor y = evss_block(x, cfg, p);
  const Tensor normed = layer_norm_channels(x, p.norm_weight, p.norm_bias);
  std::vector<std::size_t> order(25);
  for (std::size_t i = 0; i < 25; ++i) order[i] = i;
  const Tensor scanned = spatial_take(normed, order, true);
  const Tensor seq = scan_tokens(scanned, p.ssm);
  std::vector<double> grid(100);
  for (std::size_t t = 0; t < 25; ++t) {
    for (std::size_t c = 0; c < 4; ++c) grid[c * 25 + t] = seq[t * 4 + c];
  }
  const Tensor expect = se_gate(Tensor({4, 5, 5}, grid), p.scan_se);
  CHECK(max_abs_diff(y, expect) < 1e-6);
}

TEST_CASE("evss outer residual flag adds the input") {
  testing::Precision64 guard;
  Rng rng(6);
  BlockConfig cfg = evss_cfg(4);
  const EvssParams p = EvssParams::init(cfg, rng);
  const Tensor x = rng.uniform_tensor({4, 4, 4}, -1, 1);
  const Tensor plain = evss_block(x, cfg, p);
  cfg.outer_residual = true;
  CHECK(max_abs_diff(evss_block(x, cfg, p), add(plain, x)) < 1e-14);
}

TEST_CASE("evss clamps the skip step on small grids") {
  Rng rng(7);
  BlockConfig cfg = evss_cfg(4);
  cfg.skip_step = 3;
  const EvssParams p = EvssParams::init(cfg, rng);
  CHECK(evss_block(rng.uniform_tensor({4, 2, 2}, -1, 1), cfg, p).shape() == Shape{4, 2, 2});
}

TEST_CASE("inres with zero residual weights is the identity") {
  const BlockConfig cfg = inres_cfg(6, 6, 1);
  const InResParams p = InResParams::zeros(cfg);
  const Tensor x = Rng(8).uniform_tensor({6, 5, 5}, -1, 1);
  const Tensor y = inres_block(x, cfg, p);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("inres stride 2 halves the grid") {
  Rng rng(9);
  const BlockConfig cfg = inres_cfg(4, 8, 2);
  const InResParams p = InResParams::init(cfg, rng);
  CHECK(inres_block(rng.uniform_tensor({4, 8, 8}, -1, 1), cfg, p).shape() == Shape{8, 4, 4});
  CHECK(inres_block(rng.uniform_tensor({4, 7, 9}, -1, 1), cfg, p).shape() == Shape{8, 4, 5});
}

TEST_CASE("stem shapes and null input") {
  Rng rng(10);
  const StemParams p = StemParams::init(3, 16, 8, rng);
  CHECK(stem(rng.uniform_tensor({3, 32, 32}, -1, 1), p).shape() == Shape{8, 16, 16});
  for (double v : testing::values(stem(Tensor::zeros({3, 32, 32}), p))) CHECK(v == 0.0);
  CHECK_THROWS_AS(stem(Tensor::zeros({3, 31, 32}), p), Error);
  const StemParams big = StemParams::init(3, 16, 48, rng);
  CHECK(stem(Tensor::zeros({3, 224, 224}), big).shape() == Shape{48, 112, 112});
}

TEST_CASE("block gradient checks") {
  const SuiteReport r = gradcheck_suite(0);
  std::ostringstream os;
  r.print(os);
  INFO(os.str());
  CHECK(r.passed());
}
