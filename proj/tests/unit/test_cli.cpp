#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "evmamba");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = evm::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("inspect scan-plan grids") {
  const Result r = run({"inspect", "scan-plan", "4", "4", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("  1 2 1 2\n  3 4 3 4\n  1 2 1 2\n  3 4 3 4\n") != std::string::npos);
  CHECK(r.out.find("es2d 16, ss2d 64") != std::string::npos);
  const Result one = run({"inspect", "scan-plan", "3", "3", "1"});
  CHECK(one.out.find("  1 1 1\n  1 1 1\n  1 1 1\n") != std::string::npos);
  CHECK(run({"inspect", "scan-plan", "3", "3", "4"}).code != 0);
  CHECK(run({"inspect", "scan-plan", "3", "x", "1"}).code != 0);
}

TEST_CASE("inspect stage tables") {
  const Result t = run({"inspect", "T"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("2      EVSS        2       96         28  (decision)") != std::string::npos);
  CHECK(t.out.find("3      InRes       4      192         14") != std::string::npos);
  CHECK(t.out.find("assignment: EVSS EVSS InRes InRes") != std::string::npos);
  CHECK(t.out.find("target: 6.0 M params") != std::string::npos);
  const Result p = run({"inspect", "T", "--layout", "previous"});
  CHECK(p.out.find("assignment: InRes InRes EVSS EVSS") != std::string::npos);
  CHECK(run({"inspect", "Q"}).code != 0);
}

TEST_CASE("argument errors") {
  CHECK(run({}).code != 0);
  CHECK(run({"train", "--precision", "16"}).code != 0);
  CHECK(run({"train", "--epochs", "0"}).code != 0);
  CHECK(run({"eval"}).code != 0);
}

TEST_CASE("train then eval reproduces the logged accuracy") {
  const fs::path dir = fs::temp_directory_path() / "evmamba_cli_run";
  fs::remove_all(dir);
  const fs::path spec = fs::temp_directory_path() / "evmamba_cli_toy.json";
  {
    std::ofstream f(spec);
    f << R"({"name":"toy","dims":[8,16,32,64],"depths":[1,1,1,1],"num_classes":2,"input_resolution":32,"state_dim":4})";
  }
  const Result tr = run({"train", "--spec", spec.string(), "--data", "synthetic:count=8,seed=3", "--epochs", "2",
                         "--batch", "4", "--precision", "64", "--out", dir.string()});
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  std::ifstream csv(dir / "metrics.csv");
  std::string header, line, last;
  std::getline(csv, header);
  CHECK(header == "epoch,loss,acc,lr");
  while (std::getline(csv, line)) last = line;
  const std::string acc = last.substr(last.find(',', last.find(',') + 1) + 1);
  const std::string logged = acc.substr(0, acc.find(','));

  const Result ev = run({"eval", "--checkpoint", (dir / "model.ckpt").string(), "--data", "synthetic:count=8,seed=3",
                         "--precision", "64"});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("accuracy " + logged + " ") == 0);

  // Corrupt the magic: clean error.
  {
    std::fstream f(dir / "model.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('Z');
  }
  const Result bad = run({"eval", "--checkpoint", (dir / "model.ckpt").string(), "--data", "synthetic:count=8,seed=3"});
  CHECK(bad.code != 0);
  CHECK(bad.err.find("magic") != std::string::npos);
}

TEST_CASE("profile subcommand") {
  const Result r = run({"profile", "--spec", "T", "--per-layer"});
  CHECK(r.code == 0);
  CHECK(r.out.find("stage1.block0") != std::string::npos);
}
