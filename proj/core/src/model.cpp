#include "evmamba/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evm {

ModelSpec ModelSpec::variant(std::string_view name) {
  ModelSpec s;
  if (name == "T") {
    s.dims = {48, 96, 192, 384};
    s.depths = {2, 2, 4, 2};
  } else if (name == "S") {
    s.dims = {96, 192, 384, 768};
    s.depths = {2, 2, 4, 2};
  } else if (name == "B") {
    s.dims = {96, 192, 384, 768};
    s.depths = {2, 2, 9, 2};
  } else {
    throw Error("unknown variant '" + std::string(name) + "' (expected T, S or B)");
  }
  s.name = std::string(name);
  return s;
}

void ModelSpec::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (dims[i] == 0) throw Error("model spec: dims must be positive");
    if (depths[i] == 0) throw Error("model spec: depths must be positive");
    if (i > 0 && dims[i] != 2 * dims[i - 1]) {
      throw Error("model spec: dims must double per stage, got " + std::to_string(dims[i - 1]) + " -> " +
                  std::to_string(dims[i]));
    }
  }
  if (num_classes == 0) throw Error("model spec: num_classes must be positive");
  if (skip_step == 0) throw Error("model spec: skip step must be >= 1");
  if (state_dim == 0 || se_reduction == 0 || expansion == 0 || stem_width == 0) {
    throw Error("model spec: state_dim, se_reduction, expansion and stem_width must be positive");
  }
  if (input_resolution == 0 || input_resolution % 32 != 0) {
    throw Error("model spec: input resolution must be a positive multiple of 32");
  }
}

BlockConfig ModelSpec::block_config(int stage) const {
  BlockConfig c;
  c.kind = stage_rule(stage, layout);
  c.channels_in = c.channels_out = dims.at(static_cast<std::size_t>(stage - 1));
  c.skip_step = skip_step;
  c.se_reduction = se_reduction;
  c.expansion = expansion;
  c.state_dim = state_dim;
  c.fusion = fusion;
  c.outer_residual = outer_residual;
  c.scan = scan;
  c.scan_options = {full_directions, combine};
  return c;
}

std::string spec_to_json(const ModelSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["dims"] = s.dims;
  j["depths"] = s.depths;
  j["layout"] = layout_name(s.layout);
  j["p"] = s.skip_step;
  j["num_classes"] = s.num_classes;
  j["input_resolution"] = s.input_resolution;
  j["state_dim"] = s.state_dim;
  j["se_reduction"] = s.se_reduction;
  j["expansion"] = s.expansion;
  j["stem_width"] = s.stem_width;
  j["fusion"] = s.fusion;
  j["outer_residual"] = s.outer_residual;
  j["scan"] = scan_mode_name(s.scan);
  j["full_directions"] = s.full_directions;
  j["combine"] = s.combine == Combine::sum ? "sum" : "mean";
  return j.dump(2);
}

ModelSpec spec_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("model config: top level must be an object");
  ModelSpec s;
  if (j.contains("variant")) s = ModelSpec::variant(j.at("variant").get<std::string>());
  try {
    auto read_array = [&](const char* key, std::array<std::size_t, 4>& out) {
      if (!j.contains(key)) return;
      auto v = j.at(key).get<std::vector<std::size_t>>();
      if (v.size() != 4) throw Error(std::string("model config: '") + key + "' must list 4 entries");
      std::copy(v.begin(), v.end(), out.begin());
    };
    auto read = [&](const char* key, auto& out) {
      if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    read("name", s.name);
    read_array("dims", s.dims);
    read_array("depths", s.depths);
    if (j.contains("layout")) s.layout = parse_layout(j.at("layout").get<std::string>());
    read("p", s.skip_step);
    read("num_classes", s.num_classes);
    read("input_resolution", s.input_resolution);
    read("state_dim", s.state_dim);
    read("se_reduction", s.se_reduction);
    read("expansion", s.expansion);
    read("stem_width", s.stem_width);
    read("fusion", s.fusion);
    read("outer_residual", s.outer_residual);
    if (j.contains("scan")) s.scan = parse_scan_mode(j.at("scan").get<std::string>());
    read("full_directions", s.full_directions);
    if (j.contains("combine")) {
      const auto c = j.at("combine").get<std::string>();
      if (c != "sum" && c != "mean") throw Error("model config: combine must be 'sum' or 'mean'");
      s.combine = c == "sum" ? Combine::sum : Combine::mean;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model config: ") + e.what());
  }
  s.validate();
  return s;
}

ModelSpec resolve_spec(const std::string& name_or_path) {
  if (name_or_path == "T" || name_or_path == "S" || name_or_path == "B") return ModelSpec::variant(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw Error("cannot read model config '" + name_or_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return spec_from_json(ss.str());
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Model m;
  m.spec_ = spec;
  m.stem_ = StemParams::init(3, spec.stem_width, spec.dims[0], rng);
  for (int s = 0; s < 4; ++s) {
    Stage& stage = m.stages_[s];
    const std::size_t cin = s == 0 ? spec.dims[0] : spec.dims[s - 1];
    stage.downsample = ConvLayer::init(cin, spec.dims[s], 3, {2, 1, 1}, rng);
    const BlockConfig cfg = spec.block_config(s + 1);
    for (std::size_t b = 0; b < spec.depths[s]; ++b) stage.blocks.push_back(Block::init(cfg, rng));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.dims[3]));
  m.head_weight_ = rng.uniform_tensor({spec.dims[3], spec.num_classes}, -bound, bound);
  m.head_bias_ = Tensor::zeros({spec.num_classes});
  return m;
}

Tensor Model::forward_one(const Tensor& image, ForwardTrace* trace) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw Error("model forward: expected a [3×H×W] image, got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw Error("model forward: spatial extents must be divisible by 32, got " + shape_str(image.shape()));
  }
  Tensor h = stem(image, stem_);
  if (trace) trace->resolutions.push_back(h.dim(1));
  for (const Stage& stage : stages_) {
    h = (*stage.downsample)(h);
    for (const Block& b : stage.blocks) h = b.forward(h);
    if (trace) trace->resolutions.push_back(h.dim(1));
  }
  const Tensor pooled = reshape(global_avg_pool(h), {1, h.dim(0)});
  return reshape(linear(pooled, head_weight_, &head_bias_), {spec_.num_classes});
}

Tensor Model::forward(const Tensor& x, ForwardTrace* trace) const {
  if (x.rank() != 4) throw Error("model forward: expected [B×3×H×W], got " + shape_str(x.shape()));
  std::vector<Tensor> rows;
  rows.reserve(x.dim(0));
  for (std::size_t b = 0; b < x.dim(0); ++b) rows.push_back(forward_one(select(x, b), b == 0 ? trace : nullptr));
  return stack(rows);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add = [&](const std::string& name, Tensor& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  auto conv = [&](const std::string& prefix, ConvLayer& c) {
    c.visit([&](const char* leaf, Tensor& t) { add(prefix + "." + leaf, t); });
  };
  conv("stem.conv1", stem_.conv1);
  conv("stem.conv2", stem_.conv2);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = "stage" + std::to_string(s + 1) + ".";
    conv(prefix + "downsample", *stages_[s].downsample);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      stages_[s].blocks[b].visit(prefix + "block" + std::to_string(b) + ".", add);
    }
  }
  add("head.weight", head_weight_);
  add("head.bias", head_bias_);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

}  // namespace evm
