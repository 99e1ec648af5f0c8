#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("pcbf_cli_" + tag + "_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

const char* cli_path() {
  const char* env = std::getenv("PCBF_CLI");
  REQUIRE(env != nullptr);
  return env;
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path base =
      fs::temp_directory_path() / ("pcbf_cli_io_" + std::to_string(++counter));
  const fs::path out_file = base.string() + ".out";
  const fs::path err_file = base.string() + ".err";
  const std::string cmd = std::string(cli_path()) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Small synthesis settings so a full run stays under a second.
const char* kTinyConfig = R"({
  "train": {"m1": 30, "m2": 2, "epochs": 1, "batch_size": 16, "hidden": 8},
  "adaptive": {"max_iterations": 1, "initial_n": 10},
  "eval": {"episodes": 3},
  "audit": {"queries": 10, "inner": 4}
})";

}  // namespace

TEST_CASE("version and help") {
  const RunResult ver = run_cli("--version");
  CHECK(ver.code == 0);
  CHECK(!ver.out.empty());

  const RunResult bare = run_cli("");
  CHECK(bare.code == 1);
  CHECK(bare.err.find("synthesize") != std::string::npos);

  const RunResult bogus = run_cli("calibrate");
  CHECK(bogus.code == 1);
}

TEST_CASE("synthesize from a config file with flag overrides") {
  TempDir dir("synth");
  const std::string cfg = dir.sub("cfg.json");
  write_file(cfg, kTinyConfig);

  const RunResult r = run_cli("synthesize --config " + cfg +
                              " --benchmark dubins --seed 7 --out " + dir.sub("run"));
  CHECK((r.code == 0 || r.code == 2));
  CHECK((r.out == "outcome=success\n" || r.out == "outcome=failure\n"));
  CHECK((r.code == 2) == (r.out == "outcome=failure\n"));
  CHECK(fs::exists(dir.sub("run") + "/controller.json"));
  CHECK(fs::exists(dir.sub("run") + "/barrier.json"));
  CHECK(fs::exists(dir.sub("run") + "/manifest.json"));
  CHECK(fs::exists(dir.sub("run") + "/estimator.json"));

  // --strategy on the command line must beat the config file
  std::string cfg2_text = kTinyConfig;
  cfg2_text.insert(1, "\n  \"strategy\": \"adaptive\",");
  const std::string cfg2 = dir.sub("cfg2.json");
  write_file(cfg2, cfg2_text);
  const RunResult r2 = run_cli("synthesize --config " + cfg2 +
                               " --benchmark dubins --seed 7 --strategy nogp --out " +
                               dir.sub("run2"));
  CHECK((r2.code == 0 || r2.code == 2));
  CHECK(fs::exists(dir.sub("run2") + "/controller.json"));
  CHECK(!fs::exists(dir.sub("run2") + "/estimator.json"));  // nogp fits no model
}

TEST_CASE("evaluate a run directory and a bare zero policy") {
  TempDir dir("eval");
  const std::string cfg = dir.sub("cfg.json");
  write_file(cfg, kTinyConfig);
  const RunResult syn = run_cli("synthesize --config " + cfg +
                                " --benchmark dubins --seed 11 --out " + dir.sub("run"));
  REQUIRE((syn.code == 0 || syn.code == 2));

  // benchmark comes from the run manifest when not given
  const RunResult ev = run_cli("evaluate --run " + dir.sub("run") +
                               " --episodes 2 --seed 3");
  CHECK(ev.code == 0);
  CHECK(ev.out.rfind("unsafe_ratio=", 0) == 0);
  CHECK(fs::exists(dir.sub("run") + "/eval_report.json"));

  const RunResult zero = run_cli("evaluate --benchmark cartpole --policy zero "
                                 "--episodes 3 --seed 5 --out " + dir.sub("zero"));
  CHECK(zero.code == 0);
  CHECK(zero.out == "unsafe_ratio=1.000\n");

  const RunResult missing = run_cli("evaluate --run " + dir.sub("nowhere") +
                                    " --episodes 2");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);
}

TEST_CASE("config file errors surface as exit code 1") {
  TempDir dir("badcfg");
  const RunResult absent = run_cli("synthesize --config " + dir.sub("absent.json"));
  CHECK(absent.code == 1);
  CHECK(absent.err.find("cannot open") != std::string::npos);

  const std::string garbled = dir.sub("garbled.json");
  write_file(garbled, "{\"train\": ");
  const RunResult bad = run_cli("synthesize --config " + garbled);
  CHECK(bad.code == 1);

  const std::string unknown = dir.sub("unknown.json");
  write_file(unknown, "{\"benchmark\": \"dubins\", \"latent\": 3}");
  const RunResult rejected = run_cli("synthesize --config " + unknown +
                                     " --out " + dir.sub("run"));
  CHECK(rejected.code == 1);
  CHECK(rejected.err.find("error:") != std::string::npos);
}

TEST_CASE("sweep produces the summary csv") {
  TempDir dir("sweep");
  const std::string cfg = dir.sub("cfg.json");
  write_file(cfg, kTinyConfig);
  const RunResult r = run_cli("sweep --config " + cfg +
                              " --benchmark dubins --budgets 10 --seeds 1 "
                              "--episodes 2 --out " + dir.sub("grid"));
  CHECK(r.code == 0);
  const std::string csv = slurp(dir.sub("grid") + "/sweep.csv");
  CHECK(csv.rfind("benchmark,strategy,n_samples,unsafe_ratio,seed\n", 0) == 0);
  CHECK(csv.find("dubins,adaptive,10,") != std::string::npos);
  CHECK(csv.find("dubins,uniform,10,") != std::string::npos);
  CHECK(csv.find("dubins,nogp,0,") != std::string::npos);
}

TEST_CASE("density histograms a synthesized dataset") {
  TempDir dir("density");
  const std::string cfg = dir.sub("cfg.json");
  write_file(cfg, kTinyConfig);
  const RunResult syn = run_cli("synthesize --config " + cfg +
                                " --benchmark dubins --seed 2 --out " + dir.sub("run"));
  REQUIRE((syn.code == 0 || syn.code == 2));
  const std::string data = dir.sub("run") + "/iter_0/dataset.csv";
  REQUIRE(fs::exists(data));

  const RunResult r = run_cli("density --benchmark dubins --datasets " + data +
                              " --bins 8 --dims 0,1 --out " + dir.sub("hist"));
  CHECK(r.code == 0);
  CHECK(fs::exists(dir.sub("hist") + "/density_dataset.csv"));

  const RunResult bad = run_cli("density --benchmark dubins --datasets " + data +
                                " --bins 8 --dims 0,1,2 --out " + dir.sub("hist2"));
  CHECK(bad.code == 1);
}
