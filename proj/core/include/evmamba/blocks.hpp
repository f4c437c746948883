#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>

#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/scan_plan.hpp"
#include "evmamba/ssm.hpp"

namespace evm {

enum class BlockKind { evss, inres };
enum class Layout { inverted, previous, all_evss, all_inres };
enum class ScanMode { es2d, ss2d };

std::string block_kind_name(BlockKind k);
std::string layout_name(Layout l);
Layout parse_layout(std::string_view s);
std::string scan_mode_name(ScanMode m);
ScanMode parse_scan_mode(std::string_view s);

/// Block kind of stage `stage_index` (1-based) under a stage layout.
/// inverted: EVSS EVSS InRes InRes; previous: InRes InRes EVSS EVSS.
BlockKind stage_rule(int stage_index, Layout layout);

struct BlockConfig {
  BlockKind kind = BlockKind::evss;
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
  std::size_t skip_step = 2;     // EVSS: ES2D step p
  std::size_t se_reduction = 4;  // r
  std::size_t expansion = 4;     // InRes: t
  std::size_t stride = 1;
  std::size_t state_dim = 16;  // EVSS: N
  bool fusion = true;          // EVSS: keep the convolution branch
  bool outer_residual = false;  // EVSS: add x to the block output
  ScanMode scan = ScanMode::es2d;
  ScanOptions scan_options;

  /// SE bottleneck width, max(channels_in / r, 4).
  std::size_t squeezed_width() const;
  std::size_t expanded_width() const { return channels_in * expansion; }
  /// Identity shortcut is legal (InRes).
  bool has_shortcut() const { return stride == 1 && channels_in == channels_out; }
  void validate() const;
};

/// Squeeze-excitation weights for a C -> S -> C bottleneck.
struct SeParams {
  Tensor w1;  // [C×S]
  Tensor b1;  // [S]
  Tensor w2;  // [S×C]
  Tensor b2;  // [C]

  static SeParams init(std::size_t channels, std::size_t squeezed, Rng& rng);
  static SeParams zeros(std::size_t channels, std::size_t squeezed);
  std::size_t channels() const { return w1.dim(0); }
  std::size_t squeezed() const { return w1.dim(1); }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
  }
};

/// Per-channel gate sigmoid(W2·relu(W1·GAP(x) + b1) + b2), shape [C].
Tensor se_gate_values(const Tensor& x, const SeParams& p);
/// x ⊙ gate, broadcast over H and W.
Tensor se_gate(const Tensor& x, const SeParams& p);

struct ConvLayer {
  Tensor weight;  // [C_out×C_in/groups×k×k]
  Tensor bias;    // [C_out]
  Conv2dOptions options;

  static ConvLayer init(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opt, Rng& rng);
  static ConvLayer zeros(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opt);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, &bias, options); }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("weight", weight);
    fn("bias", bias);
  }
};

struct EvssParams {
  Tensor norm_weight;  // [C]
  Tensor norm_bias;    // [C]
  SsmParams ssm;
  SeParams scan_se;
  ConvLayer conv;  // 3×3, stride 1, same padding; unset when fusion is off
  SeParams conv_se;

  static EvssParams init(const BlockConfig& cfg, Rng& rng);
  static EvssParams zeros(const BlockConfig& cfg);
};

/// Dual-branch block: SE(ES2D(norm x)) + SE(Conv3x3(norm x)).
Tensor evss_block(const Tensor& x, const BlockConfig& cfg, const EvssParams& params);

struct InResParams {
  ConvLayer expand;   // 1×1, C -> tC
  ConvLayer depthwise;  // 3×3, groups = tC, stride per config
  SeParams se;        // on the expanded width
  ConvLayer project;  // 1×1, tC -> C_out

  static InResParams init(const BlockConfig& cfg, Rng& rng);
  static InResParams zeros(const BlockConfig& cfg);
};

/// Inverted residual with SE: expand -> SiLU -> depthwise -> SiLU -> SE ->
/// project, plus identity shortcut when shapes permit.
Tensor inres_block(const Tensor& x, const BlockConfig& cfg, const InResParams& params);

/// A configured block of either kind.
struct Block {
  BlockConfig config;
  std::variant<EvssParams, InResParams> params;

  static Block init(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x) const;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn);
};

/// Two 3×3 convolutions (stride 2 then stride 1), each followed by SiLU.
struct StemParams {
  ConvLayer conv1;
  ConvLayer conv2;

  static StemParams init(std::size_t in_channels, std::size_t hidden, std::size_t out_channels, Rng& rng);
};

/// x[3×H×W] with even H and W -> [dims0×H/2×W/2].
Tensor stem(const Tensor& x, const StemParams& params);

template <typename Fn>
void Block::visit(const std::string& prefix, Fn&& fn) {
  auto sub = [&](const std::string& name, auto& part) {
    part.visit([&](const char* leaf, Tensor& t) { fn(prefix + name + "." + leaf, t); });
  };
  if (auto* e = std::get_if<EvssParams>(&params)) {
    fn(prefix + "norm.weight", e->norm_weight);
    fn(prefix + "norm.bias", e->norm_bias);
    sub("ssm", e->ssm);
    sub("scan_se", e->scan_se);
    if (config.fusion) {
      sub("conv", e->conv);
      sub("conv_se", e->conv_se);
    }
  } else {
    auto& r = std::get<InResParams>(params);
    sub("expand", r.expand);
    sub("depthwise", r.depthwise);
    sub("se", r.se);
    sub("project", r.project);
  }
}

}  // namespace evm
