#include "evmamba/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace evm {

std::string block_kind_name(BlockKind k) { return k == BlockKind::evss ? "EVSS" : "InRes"; }

std::string layout_name(Layout l) {
  switch (l) {
    case Layout::inverted: return "inverted";
    case Layout::previous: return "previous";
    case Layout::all_evss: return "all-evss";
    case Layout::all_inres: return "all-inres";
  }
  return "?";
}

Layout parse_layout(std::string_view s) {
  if (s == "inverted") return Layout::inverted;
  if (s == "previous") return Layout::previous;
  if (s == "all-evss") return Layout::all_evss;
  if (s == "all-inres") return Layout::all_inres;
  throw Error("unknown layout '" + std::string(s) + "' (expected inverted, previous, all-evss, all-inres)");
}

std::string scan_mode_name(ScanMode m) { return m == ScanMode::es2d ? "es2d" : "ss2d"; }

ScanMode parse_scan_mode(std::string_view s) {
  if (s == "es2d") return ScanMode::es2d;
  if (s == "ss2d") return ScanMode::ss2d;
  throw Error("unknown scan mode '" + std::string(s) + "' (expected es2d or ss2d)");
}

BlockKind stage_rule(int stage_index, Layout layout) {
  if (stage_index < 1 || stage_index > 4) {
    throw Error("stage_rule: stage index must be in 1..4, got " + std::to_string(stage_index));
  }
  const bool early = stage_index <= 2;
  switch (layout) {
    case Layout::inverted: return early ? BlockKind::evss : BlockKind::inres;
    case Layout::previous: return early ? BlockKind::inres : BlockKind::evss;
    case Layout::all_evss: return BlockKind::evss;
    case Layout::all_inres: return BlockKind::inres;
  }
  return BlockKind::evss;
}

std::size_t BlockConfig::squeezed_width() const {
  return std::max<std::size_t>(channels_in / std::max<std::size_t>(se_reduction, 1), 4);
}

void BlockConfig::validate() const {
  if (channels_in == 0 || channels_out == 0) throw Error("block: channel counts must be positive");
  if (se_reduction == 0) throw Error("block: se_reduction must be positive");
  if (kind == BlockKind::evss) {
    if (channels_in != channels_out) throw Error("EVSS block must preserve channels");
    if (stride != 1) throw Error("EVSS block runs at stride 1");
    if (skip_step == 0) throw Error("EVSS block: skip step must be >= 1");
    if (state_dim == 0) throw Error("EVSS block: state_dim must be >= 1");
  } else {
    if (stride != 1 && stride != 2) throw Error("InRes block: stride must be 1 or 2");
    if (expansion == 0) throw Error("InRes block: expansion must be >= 1");
  }
}

SeParams SeParams::init(std::size_t channels, std::size_t squeezed, Rng& rng) {
  SeParams p = zeros(channels, squeezed);
  p.w1 = rng.uniform_tensor({channels, squeezed}, -1.0 / std::sqrt(channels), 1.0 / std::sqrt(channels));
  p.w2 = rng.uniform_tensor({squeezed, channels}, -1.0 / std::sqrt(squeezed), 1.0 / std::sqrt(squeezed));
  return p;
}

SeParams SeParams::zeros(std::size_t channels, std::size_t squeezed) {
  return {Tensor::zeros({channels, squeezed}), Tensor::zeros({squeezed}), Tensor::zeros({squeezed, channels}),
          Tensor::zeros({channels})};
}

Tensor se_gate_values(const Tensor& x, const SeParams& p) {
  if (x.rank() != 3 || x.dim(0) != p.channels()) {
    throw Error("se_gate: input " + shape_str(x.shape()) + " does not match SE width " +
                std::to_string(p.channels()));
  }
  const Tensor pooled = reshape(global_avg_pool(x), {1, x.dim(0)});
  const Tensor hidden = relu(linear(pooled, p.w1, &p.b1));
  return reshape(sigmoid(linear(hidden, p.w2, &p.b2)), {x.dim(0)});
}

Tensor se_gate(const Tensor& x, const SeParams& p) { return channel_scale(x, se_gate_values(x, p)); }

ConvLayer ConvLayer::init(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opt, Rng& rng) {
  ConvLayer layer = zeros(cin, cout, k, opt);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin / opt.groups * k * k));
  layer.weight = rng.uniform_tensor(layer.weight.shape(), -bound, bound);
  return layer;
}

ConvLayer ConvLayer::zeros(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opt) {
  if (opt.groups == 0 || cin % opt.groups != 0 || cout % opt.groups != 0) {
    throw Error("conv layer: groups must divide channel counts");
  }
  return {Tensor::zeros({cout, cin / opt.groups, k, k}), Tensor::zeros({cout}), opt};
}

EvssParams EvssParams::init(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels_in;
  EvssParams p;
  p.norm_weight = Tensor::ones({c});
  p.norm_bias = Tensor::zeros({c});
  p.ssm = SsmParams::init(c, cfg.state_dim, rng);
  p.scan_se = SeParams::init(c, cfg.squeezed_width(), rng);
  if (cfg.fusion) {
    p.conv = ConvLayer::init(c, c, 3, {1, 1, 1}, rng);
    p.conv_se = SeParams::init(c, cfg.squeezed_width(), rng);
  }
  return p;
}

EvssParams EvssParams::zeros(const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels_in;
  EvssParams p;
  p.norm_weight = Tensor::ones({c});
  p.norm_bias = Tensor::zeros({c});
  p.ssm = SsmParams::zeros(c, cfg.state_dim);
  p.scan_se = SeParams::zeros(c, cfg.squeezed_width());
  if (cfg.fusion) {
    p.conv = ConvLayer::zeros(c, c, 3, {1, 1, 1});
    p.conv_se = SeParams::zeros(c, cfg.squeezed_width());
  }
  return p;
}

Tensor evss_block(const Tensor& x, const BlockConfig& cfg, const EvssParams& params) {
  if (cfg.kind != BlockKind::evss) throw Error("evss_block: config kind is not EVSS");
  cfg.validate();
  if (x.rank() != 3 || x.dim(0) != cfg.channels_in) {
    throw Error("evss_block: input " + shape_str(x.shape()) + " does not match " +
                std::to_string(cfg.channels_in) + " channels");
  }
  const Tensor normed = layer_norm_channels(x, params.norm_weight, params.norm_bias);
  Tensor scanned;
  if (cfg.scan == ScanMode::ss2d) {
    scanned = ss2d(normed, params.ssm, cfg.scan_options.combine);
  } else {
    // Late stages can be smaller than the step; clamp so the plan stays valid.
    const std::size_t p = std::min({cfg.skip_step, x.dim(1), x.dim(2)});
    scanned = es2d(normed, params.ssm, build_plan(x.dim(1), x.dim(2), p), cfg.scan_options);
  }
  Tensor out = se_gate(scanned, params.scan_se);
  if (cfg.fusion) out = add(out, se_gate(params.conv(normed), params.conv_se));
  if (cfg.outer_residual) out = add(out, x);
  return out;
}

InResParams InResParams::init(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.expanded_width();
  InResParams p;
  p.expand = ConvLayer::init(cfg.channels_in, e, 1, {}, rng);
  p.depthwise = ConvLayer::init(e, e, 3, {cfg.stride, 1, e}, rng);
  p.se = SeParams::init(e, cfg.squeezed_width(), rng);
  p.project = ConvLayer::init(e, cfg.channels_out, 1, {}, rng);
  return p;
}

InResParams InResParams::zeros(const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t e = cfg.expanded_width();
  return {ConvLayer::zeros(cfg.channels_in, e, 1, {}), ConvLayer::zeros(e, e, 3, {cfg.stride, 1, e}),
          SeParams::zeros(e, cfg.squeezed_width()), ConvLayer::zeros(e, cfg.channels_out, 1, {})};
}

Tensor inres_block(const Tensor& x, const BlockConfig& cfg, const InResParams& params) {
  if (cfg.kind != BlockKind::inres) throw Error("inres_block: config kind is not InRes");
  cfg.validate();
  if (x.rank() != 3 || x.dim(0) != cfg.channels_in) {
    throw Error("inres_block: input " + shape_str(x.shape()) + " does not match " +
                std::to_string(cfg.channels_in) + " channels");
  }
  Tensor h = silu(params.expand(x));
  h = silu(params.depthwise(h));
  h = se_gate(h, params.se);
  h = params.project(h);
  if (cfg.has_shortcut()) h = add(h, x);
  return h;
}

Block Block::init(const BlockConfig& cfg, Rng& rng) {
  if (cfg.kind == BlockKind::evss) return {cfg, EvssParams::init(cfg, rng)};
  return {cfg, InResParams::init(cfg, rng)};
}

Tensor Block::forward(const Tensor& x) const {
  if (const auto* e = std::get_if<EvssParams>(&params)) return evss_block(x, config, *e);
  return inres_block(x, config, std::get<InResParams>(params));
}

StemParams StemParams::init(std::size_t in_channels, std::size_t hidden, std::size_t out_channels, Rng& rng) {
  return {ConvLayer::init(in_channels, hidden, 3, {2, 1, 1}, rng),
          ConvLayer::init(hidden, out_channels, 3, {1, 1, 1}, rng)};
}

Tensor stem(const Tensor& x, const StemParams& params) {
  if (x.rank() != 3) throw Error("stem: expected [C×H×W], got " + shape_str(x.shape()));
  if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
    throw Error("stem: spatial extents must be even, got " + shape_str(x.shape()));
  }
  return silu(params.conv2(silu(params.conv1(x))));
}

}  // namespace evm
