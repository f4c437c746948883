#include "evmamba/profile.hpp"

#include <cstdio>
#include <sstream>

namespace evm {

void ProfileReport::add(ProfileEntry e) {
  total_params += e.params;
  total_macs += e.macs;
  total_scan_steps += e.scan_steps;
  entries.push_back(std::move(e));
}

ProfileEntry ProfileReport::subtotal(const std::string& prefix) const {
  ProfileEntry t{prefix};
  for (const auto& e : entries) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    t.params += e.params;
    t.macs += e.macs;
    t.scan_steps += e.scan_steps;
  }
  return t;
}

std::uint64_t conv_params(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups, bool bias) {
  return static_cast<std::uint64_t>(cout) * (cin / groups) * k * k + (bias ? cout : 0);
}

std::uint64_t conv_macs(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups, std::size_t out_h,
                        std::size_t out_w) {
  return static_cast<std::uint64_t>(cout) * (cin / groups) * k * k * out_h * out_w;
}

std::uint64_t scan_macs_per_step(std::size_t channels, std::size_t state_dim) {
  const std::uint64_t d = channels, n = state_dim;
  return (2 * n + d) * d + 3 * d * n;
}

namespace {

std::size_t out_extent(std::size_t in, const ConvLayer& c) {
  const std::size_t k = c.weight.dim(2);
  return (in + 2 * c.options.padding - k) / c.options.stride + 1;
}

std::uint64_t count(const Tensor& t) { return t.defined() ? t.numel() : 0; }

// Adds a conv entry and returns the output extents.
std::pair<std::size_t, std::size_t> add_conv(ProfileReport& r, const std::string& name, const ConvLayer& c,
                                             std::size_t h, std::size_t w) {
  const std::size_t ho = out_extent(h, c), wo = out_extent(w, c);
  const std::size_t cout = c.weight.dim(0), k = c.weight.dim(2), groups = c.options.groups;
  const std::size_t cin = c.weight.dim(1) * groups;
  r.add({name, count(c.weight) + count(c.bias), conv_macs(cin, cout, k, groups, ho, wo), 0});
  return {ho, wo};
}

void add_se(ProfileReport& r, const std::string& name, const SeParams& se) {
  r.add({name, count(se.w1) + count(se.b1) + count(se.w2) + count(se.b2),
         2ull * se.channels() * se.squeezed(), 0});
}

}  // namespace

ProfileReport profile(Model& model, std::size_t height, std::size_t width) {
  const ModelSpec& spec = model.spec();
  ProfileReport r;
  r.model_name = spec.name;
  r.input_height = height;
  r.input_width = width;
  auto [h, w] = add_conv(r, "stem.conv1", model.stem_params().conv1, height, width);
  std::tie(h, w) = add_conv(r, "stem.conv2", model.stem_params().conv2, h, w);
  for (std::size_t s = 0; s < 4; ++s) {
    const Model::Stage& stage = model.stage(s);
    const std::string prefix = "stage" + std::to_string(s + 1) + ".";
    std::tie(h, w) = add_conv(r, prefix + "downsample", *stage.downsample, h, w);
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      const Block& block = stage.blocks[b];
      const BlockConfig& cfg = block.config;
      const std::string bp = prefix + "block" + std::to_string(b) + ".";
      if (const auto* e = std::get_if<EvssParams>(&block.params)) {
        r.add({bp + "norm", count(e->norm_weight) + count(e->norm_bias), 0, 0});
        std::uint64_t steps = 0;
        if (cfg.scan == ScanMode::ss2d) {
          steps = ss2d_steps(h, w);
        } else {
          const std::size_t p = std::min({cfg.skip_step, h, w});
          steps = es2d_steps(build_plan(h, w, p), cfg.scan_options);
        }
        r.add({bp + "ssm", e->ssm.param_count(), steps * scan_macs_per_step(cfg.channels_in, cfg.state_dim),
               steps});
        add_se(r, bp + "scan_se", e->scan_se);
        if (cfg.fusion) {
          add_conv(r, bp + "conv", e->conv, h, w);
          add_se(r, bp + "conv_se", e->conv_se);
        }
      } else {
        const auto& p = std::get<InResParams>(block.params);
        add_conv(r, bp + "expand", p.expand, h, w);
        auto [ho, wo] = add_conv(r, bp + "depthwise", p.depthwise, h, w);
        add_se(r, bp + "se", p.se);
        add_conv(r, bp + "project", p.project, ho, wo);
        h = ho;
        w = wo;
      }
    }
  }
  const Tensor& head = model.head_weight();
  r.add({"head.fc", static_cast<std::uint64_t>(head.numel()) + head.dim(1),
         static_cast<std::uint64_t>(head.dim(0)) * head.dim(1), 0});
  return r;
}

std::optional<BudgetTarget> budget_target(const std::string& variant) {
  if (variant == "T") return BudgetTarget{6.0, 0.8};
  if (variant == "S") return BudgetTarget{11.0, 1.3};
  if (variant == "B") return BudgetTarget{33.0, 4.0};
  return std::nullopt;
}

double deviation_percent(double actual, double target) { return (actual - target) / target * 100.0; }

std::string format_profile(const ProfileReport& r, bool per_layer) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "profile %s @ %zux%zu\n", r.model_name.c_str(), r.input_height, r.input_width);
  os << line;
  auto row = [&](const std::string& name, const ProfileEntry& e) {
    std::snprintf(line, sizeof line, "  %-28s %12llu params %16llu MACs %10llu scan steps\n", name.c_str(),
                  static_cast<unsigned long long>(e.params), static_cast<unsigned long long>(e.macs),
                  static_cast<unsigned long long>(e.scan_steps));
    os << line;
  };
  if (per_layer) {
    for (const auto& e : r.entries) row(e.name, e);
  } else {
    for (const char* part : {"stem.", "stage1.", "stage2.", "stage3.", "stage4.", "head."}) {
      row(part, r.subtotal(part));
    }
  }
  const double pm = static_cast<double>(r.total_params) / 1e6;
  const double gf = static_cast<double>(r.total_macs) / 1e9;
  std::snprintf(line, sizeof line, "  total: %.3f M params, %.3f GFLOPs (MACs), %llu scan steps\n", pm, gf,
                static_cast<unsigned long long>(r.total_scan_steps));
  os << line;
  if (auto t = budget_target(r.model_name); t && r.input_height == 224 && r.input_width == 224) {
    std::snprintf(line, sizeof line, "  target: %.1f M params (%+.2f%%), %.1f GFLOPs (%+.2f%%)\n", t->params_millions,
                  deviation_percent(pm, t->params_millions), t->gflops, deviation_percent(gf, t->gflops));
    os << line;
  }
  return os.str();
}

}  // namespace evm
