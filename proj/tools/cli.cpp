#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "evmamba/checkpoint.hpp"
#include "evmamba/data.hpp"
#include "evmamba/profile.hpp"
#include "evmamba/scan_plan.hpp"
#include "evmamba/train.hpp"
#include "evmamba/verify.hpp"

namespace evm::cli {

namespace fs = std::filesystem;

std::string stage_table(const ModelSpec& spec) {
  spec.validate();
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "model %s: layout %s, scan %s (p=%zu), N=%zu, %zu classes @ %zux%zu\n",
                spec.name.c_str(), layout_name(spec.layout).c_str(), scan_mode_name(spec.scan).c_str(), spec.skip_step,
                spec.state_dim, spec.num_classes, spec.input_resolution, spec.input_resolution);
  os << line;
  std::snprintf(line, sizeof line, "  %-6s %-6s %6s %8s %10s\n", "stage", "kind", "depth", "dims", "resolution");
  os << line;
  std::size_t res = spec.input_resolution / 2;
  std::snprintf(line, sizeof line, "  %-6s %-6s %6s %8zu %10zu\n", "stem", "conv", "2", spec.dims[0], res);
  os << line;
  const bool preset = spec.name == "T" || spec.name == "S" || spec.name == "B";
  for (int s = 1; s <= 4; ++s) {
    res /= 2;
    const BlockConfig cfg = spec.block_config(s);
    std::snprintf(line, sizeof line, "  %-6d %-6s %6zu %8zu %10zu%s\n", s, block_kind_name(cfg.kind).c_str(),
                  spec.depths[s - 1], spec.dims[s - 1], res, preset && s == 2 ? "  (decision)" : "");
    os << line;
  }
  os << "  assignment:";
  for (int s = 1; s <= 4; ++s) os << ' ' << block_kind_name(stage_rule(s, spec.layout));
  os << '\n';
  return os.str();
}

std::string scan_plan_report(std::size_t height, std::size_t width, std::size_t step) {
  const ScanPlan plan = build_plan(height, width, step);
  std::ostringstream os;
  os << "scan plan " << height << "x" << width << ", p=" << step << ": " << plan.groups.size() << " groups\n";
  const auto map = plan.group_map();
  std::size_t w = std::to_string(plan.groups.size()).size();
  for (std::size_t r = 0; r < height; ++r) {
    os << "  ";
    for (std::size_t c = 0; c < width; ++c) {
      const std::string id = std::to_string(map[r * width + c]);
      os << std::string(w - id.size(), ' ') << id << (c + 1 < width ? " " : "\n");
    }
  }
  char line[160];
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const ScanGroup& grp = plan.groups[g];
    std::snprintf(line, sizeof line, "  group %zu: offset (%zu,%zu), %zux%zu = %zu tokens, %s\n", g + 1, grp.offset_m,
                  grp.offset_n, grp.rows, grp.cols, grp.size(), direction_name(grp.direction).c_str());
    os << line;
  }
  os << "  recurrence steps: es2d " << es2d_steps(plan) << ", ss2d " << ss2d_steps(height, width) << "\n";
  return os.str();
}

namespace {

struct Common {
  std::string spec = "T";
  std::string data = "synthetic";
  int precision = 32;
  std::uint64_t seed = 0;
};

void apply_precision(int bits) { set_precision(bits == 64 ? Precision::f64 : Precision::f32); }

// Synthetic sources inherit the spec's resolution and class count unless set.
std::string data_source(const std::string& src, const ModelSpec& spec) {
  if (src.rfind("synthetic", 0) != 0) return src;
  std::string s = src;
  auto has = [&](const char* key) { return s.find(std::string(key) + "=") != std::string::npos; };
  std::string extra;
  if (!has("classes")) extra += "classes=" + std::to_string(spec.num_classes);
  if (!has("size")) extra += std::string(extra.empty() ? "" : ",") + "size=" + std::to_string(spec.input_resolution);
  if (extra.empty()) return s;
  if (s == "synthetic") return "synthetic:" + extra;
  return s + "," + extra;
}

int cmd_train(const Common& c, const TrainConfig& tc, const std::string& out_dir, std::ostream& out) {
  apply_precision(c.precision);
  const ModelSpec spec = resolve_spec(c.spec);
  const Dataset data = load_dataset(data_source(c.data, spec));
  Model model = Model::build(spec, c.seed);
  fs::create_directories(out_dir);
  {
    std::ofstream js(fs::path(out_dir) / "spec.json");
    js << spec_to_json(spec) << '\n';
  }
  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  if (!csv) throw Error("cannot write " + (fs::path(out_dir) / "metrics.csv").string());
  out << "training " << spec.name << " (" << model.parameter_count() << " params) on " << data.size()
      << " samples, " << tc.epochs << " epochs\n";
  auto log = train(model, data, tc, &csv, [&](const EpochMetrics& m) {
    if (m.epoch == 1 || m.epoch % 10 == 0 || m.epoch == tc.epochs) out << metrics_line(m) << '\n' << std::flush;
  });
  write_checkpoint(fs::path(out_dir) / "model.ckpt", model);
  out << "final accuracy " << log.back().acc << ", checkpoint " << (fs::path(out_dir) / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(Common c, const std::string& ckpt, bool spec_given, std::ostream& out) {
  apply_precision(c.precision);
  if (!spec_given) {
    const fs::path sibling = fs::path(ckpt).parent_path() / "spec.json";
    if (fs::exists(sibling)) c.spec = sibling.string();
  }
  const ModelSpec spec = resolve_spec(c.spec);
  Model model = Model::build(spec, c.seed);
  read_checkpoint(ckpt, model);
  const Dataset data = load_dataset(data_source(c.data, spec));
  const EvalReport rep = evaluate(model, data);
  char line[128];
  std::snprintf(line, sizeof line, "accuracy %.17g (%zu/%zu) on split %s\n", rep.accuracy(), rep.correct, rep.total,
                data.split.c_str());
  out << line << "confusion [true x predicted]:\n";
  for (const auto& row : rep.confusion) {
    out << " ";
    for (auto v : row) out << ' ' << v;
    out << '\n';
  }
  return 0;
}

int cmd_inspect(const std::vector<std::string>& args, const std::string& layout, std::ostream& out) {
  if (args.empty()) throw Error("inspect: expected a spec (T, S, B, path) or 'scan-plan H W p'");
  if (args[0] == "scan-plan") {
    if (args.size() != 4) throw Error("inspect scan-plan: expected H W p");
    std::size_t v[3];
    for (int i = 0; i < 3; ++i) {
      try {
        const long long n = std::stoll(args[i + 1]);
        if (n <= 0) throw Error("");
        v[i] = static_cast<std::size_t>(n);
      } catch (const std::exception&) {
        throw Error("inspect scan-plan: '" + args[i + 1] + "' is not a positive integer");
      }
    }
    out << scan_plan_report(v[0], v[1], v[2]);
    return 0;
  }
  if (args.size() != 1) throw Error("inspect: unexpected extra arguments");
  ModelSpec spec = resolve_spec(args[0]);
  if (!layout.empty()) spec.layout = parse_layout(layout);
  out << stage_table(spec);
  Model model = Model::build(spec, 0);
  out << format_profile(profile(model, spec.input_resolution, spec.input_resolution), false);
  return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool verbose, std::ostream& out) {
  bool ok = true;
  if (suite == "all" || suite == "equivalence") {
    const SuiteReport r = equivalence_suite(seed);
    r.print(out, verbose);
    ok = ok && r.passed();
  }
  if (suite == "all" || suite == "gradcheck") {
    const SuiteReport r = gradcheck_suite(seed);
    r.print(out, verbose);
    ok = ok && r.passed();
  }
  out << (ok ? "verify: PASS\n" : "verify: FAIL\n");
  return ok ? 0 : 1;
}

int cmd_profile(const std::string& spec_name, std::size_t resolution, bool per_layer, std::ostream& out) {
  const ModelSpec spec = resolve_spec(spec_name);
  Model model = Model::build(spec, 0);
  const std::size_t res = resolution ? resolution : spec.input_resolution;
  out << format_profile(profile(model, res, res), per_layer);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"EfficientVMamba reference implementation"};
  app.require_subcommand(1);

  Common c;
  TrainConfig tc;
  std::string out_dir = "run";
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint plus metrics.csv");
  train_cmd->add_option("--spec", c.spec, "T, S, B or a JSON spec file");
  train_cmd->add_option("--data", c.data, "synthetic[:count=..,classes=..,size=..,seed=..,noise=..] or a directory");
  train_cmd->add_option("--epochs", tc.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", tc.batch)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tc.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--warmup", tc.warmup_epochs, "warmup epochs");
  train_cmd->add_option("--seed", c.seed);
  train_cmd->add_option("--precision", c.precision)->check(CLI::IsMember({32, 64}));
  train_cmd->add_option("--weight-decay", tc.weight_decay);
  train_cmd->add_flag("--flip", tc.flip, "random horizontal flips");
  train_cmd->add_option("--out", out_dir, "output directory");

  std::string ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy and confusion counts of a checkpoint");
  auto* eval_spec = eval_cmd->add_option("--spec", c.spec, "defaults to spec.json beside the checkpoint, else T");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data", c.data);
  eval_cmd->add_option("--seed", c.seed);
  eval_cmd->add_option("--precision", c.precision)->check(CLI::IsMember({32, 64}));

  std::vector<std::string> inspect_args;
  std::string layout;
  auto* inspect_cmd = app.add_subcommand("inspect", "stage table of a spec, or 'scan-plan H W p'");
  inspect_cmd->add_option("target", inspect_args)->required();
  inspect_cmd->add_option("--layout", layout, "inverted, previous, all-evss or all-inres");

  std::string suite = "all";
  bool verbose = false;
  std::uint64_t verify_seed = 0;
  auto* verify_cmd = app.add_subcommand("verify", "run the oracle suites; exit 1 on any failure");
  verify_cmd->add_option("--suite", suite)->check(CLI::IsMember({"all", "equivalence", "gradcheck"}));
  verify_cmd->add_option("--seed", verify_seed);
  verify_cmd->add_flag("-v,--verbose", verbose);

  std::string profile_spec = "T";
  std::size_t resolution = 0;
  bool per_layer = false;
  auto* profile_cmd = app.add_subcommand("profile", "parameter and MAC counts");
  profile_cmd->add_option("--spec", profile_spec);
  profile_cmd->add_option("--resolution", resolution);
  profile_cmd->add_flag("--per-layer", per_layer);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) return cmd_train(c, tc, out_dir, out);
    if (*eval_cmd) return cmd_eval(c, ckpt, eval_spec->count() > 0, out);
    if (*inspect_cmd) return cmd_inspect(inspect_args, layout, out);
    if (*verify_cmd) return cmd_verify(suite, verify_seed, verbose, out);
    if (*profile_cmd) return cmd_profile(profile_spec, resolution, per_layer, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace evm::cli
