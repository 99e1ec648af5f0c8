#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "commands.hpp"
#include "errors.hpp"
#include "io.hpp"

using namespace pcbf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("pcbf_cmd_" + tag + "_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

// Smallest configuration that still exercises the full pipeline.
RunSpec tiny_spec() {
  RunSpec spec;
  spec.benchmark = "dubins";
  spec.seed = 7;
  spec.train.m1 = 30;
  spec.train.m2 = 2;
  spec.train.epochs = 1;
  spec.train.batch_size = 16;
  spec.train.hidden = 8;
  spec.adaptive.max_iterations = 1;
  spec.adaptive.initial_n = 10;
  spec.eval.episodes = 3;
  spec.audit_queries = 20;
  spec.audit_inner = 8;
  return spec;
}

}  // namespace

TEST_CASE("run specs parse every section") {
  const std::string text = R"({
    "benchmark": "cartpole", "strategy": "uniform", "seed": 42, "out": "/tmp/x",
    "jobs": 2,
    "estimator": {"delta": 0.9, "min_semiaxis": 0.001},
    "gp": {"ascent_iters": 10, "refit_iters": 5, "step": 0.02, "rounds": 2, "posterior_draws": 8},
    "train": {"m1": 100, "m2": 4, "lambda1": 50.0, "lambda2": 2.0, "alpha_slope": 0.2,
              "epochs": 3, "learning_rate": 0.05, "batch_size": 8, "hidden": 16},
    "adaptive": {"max_iterations": 2, "initial_n": 12, "hard_threshold": 0.01,
                 "dedupe_radius": 0.3, "max_new_per_iter": 9, "sample_budget": 40},
    "eval": {"episodes": 17, "horizon_s": 5.0, "critical_exit_s": 0.5, "max_draws": 1234},
    "audit": {"queries": 11, "inner": 3},
    "sweep": {"budgets": [10, 20], "seeds": [1, 2, 3]},
    "evaluate": {"run": "/tmp/run", "policy": "zero"},
    "density": {"bins": 25, "dims": [1, 2], "datasets": ["a.csv", "b.csv"]}
  })";
  const RunSpec s = runspec_from_json(text);
  CHECK(s.benchmark == "cartpole");
  CHECK(s.strategy == Strategy::uniform);
  CHECK(s.seed == 42);
  CHECK(s.out_dir == "/tmp/x");
  CHECK(s.jobs == 2);
  CHECK(s.adaptive.estimator.delta == 0.9);
  CHECK(s.adaptive.estimator.min_semiaxis == 0.001);
  CHECK(s.adaptive.gp.ascent_iters == 10);
  CHECK(s.adaptive.gp.refit_iters == 5);
  CHECK(s.adaptive.gp.step == 0.02);
  CHECK(s.adaptive.gp.rounds == 2);
  CHECK(s.adaptive.gp.posterior_draws == 8);
  CHECK(s.train.m1 == 100);
  CHECK(s.train.m2 == 4);
  CHECK(s.train.lambda1 == 50.0);
  CHECK(s.train.lambda2 == 2.0);
  CHECK(s.train.alpha_slope == 0.2);
  CHECK(s.train.epochs == 3);
  CHECK(s.train.learning_rate == 0.05);
  CHECK(s.train.batch_size == 8);
  CHECK(s.train.hidden == 16);
  CHECK(s.adaptive.max_iterations == 2);
  CHECK(s.adaptive.initial_n == 12);
  CHECK(s.adaptive.hard_threshold == 0.01);
  CHECK(s.adaptive.dedupe_radius == 0.3);
  CHECK(s.adaptive.max_new_per_iter == 9);
  CHECK(s.adaptive.sample_budget == 40);
  CHECK(s.eval.episodes == 17);
  CHECK(s.eval.horizon_s == 5.0);
  CHECK(s.eval.critical_exit_s == 0.5);
  CHECK(s.eval.max_draws == 1234);
  CHECK(s.audit_queries == 11);
  CHECK(s.audit_inner == 3);
  CHECK(s.sweep_budgets == std::vector<long long>{10, 20});
  CHECK(s.sweep_seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(s.run_dir == "/tmp/run");
  CHECK(s.policy == "zero");
  CHECK(s.density_bins == 25);
  CHECK(s.density_dim_i == 1);
  CHECK(s.density_dim_j == 2);
  CHECK(s.density_datasets == std::vector<std::string>{"a.csv", "b.csv"});
}

TEST_CASE("unknown config keys are rejected everywhere") {
  CHECK_THROWS_AS(runspec_from_json(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"train": {"m3": 1}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"gp": {"kernel": "se"}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"adaptive": {"budget": 5}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"eval": {"horizon": 1}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"estimator": {"level": 0.9}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"audit": {"points": 3}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"sweep": {"grid": []}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"evaluate": {"checkpoint": "x"}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"density": {"resolution": 2}})"), ConfigError);
}

TEST_CASE("malformed config values are rejected") {
  CHECK_THROWS_AS(runspec_from_json("not json"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"strategy": "random"})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"seed": -1})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"jobs": 0})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"train": {"m1": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"estimator": {"delta": 1.0}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"sweep": {"budgets": 5}})"), ConfigError);
  CHECK_THROWS_AS(runspec_from_json(R"({"density": {"dims": [1]}})"), ConfigError);
}

TEST_CASE("the config echo is a fixpoint and carries no paths") {
  RunSpec spec = tiny_spec();
  spec.out_dir = "/tmp/somewhere";
  spec.run_dir = "/tmp/elsewhere";
  const std::string echo = runspec_config_json(spec);
  CHECK(echo.find("/tmp") == std::string::npos);
  CHECK(echo.find("\"out\"") == std::string::npos);
  const RunSpec back = runspec_from_json(echo);
  CHECK(runspec_config_json(back) == echo);
}

TEST_CASE("synthesize writes a complete, reproducible run directory") {
  RunSpec spec = tiny_spec();
  TempDir a("syn_a"), b("syn_b");
  spec.out_dir = a.str();
  const int rc1 = cmd_synthesize(spec);
  CHECK((rc1 == 0 || rc1 == 2));
  for (const char* name :
       {"controller.json", "barrier.json", "estimator.json", "manifest.json"})
    CHECK(file_exists(a.sub(name)));
  for (const char* name :
       {"dataset.csv", "train_log.csv", "barrier.json", "controller.json"})
    CHECK(file_exists((a.path / "iter_0" / name).string()));
  const std::string manifest = read_file(a.sub("manifest.json"));
  CHECK(manifest.find("\"command\": \"synthesize\"") != std::string::npos);
  if (rc1 == 2) {
    CHECK(manifest.find("\"outcome\": \"failure\"") != std::string::npos);
    CHECK(file_exists(a.sub("hard_samples.json")));
  } else {
    CHECK(manifest.find("\"outcome\": \"success\"") != std::string::npos);
    CHECK_FALSE(file_exists(a.sub("hard_samples.json")));
  }
  CHECK(manifest.find("wall") == std::string::npos);  // reruns must be byte-identical

  spec.out_dir = b.str();
  const int rc2 = cmd_synthesize(spec);
  CHECK(rc1 == rc2);
  for (const char* name : {"controller.json", "barrier.json", "estimator.json",
                           "manifest.json"})
    CHECK(read_file(a.sub(name)) == read_file(b.sub(name)));
}

TEST_CASE("evaluating the zero policy on the critical set is always unsafe") {
  RunSpec spec = tiny_spec();
  TempDir d("eval_zero");
  spec.out_dir = d.str();
  spec.policy = "zero";
  std::string line;
  double ratio = -1.0;
  const int rc = cmd_evaluate(spec, &line, &ratio);
  CHECK(rc == 0);
  CHECK(line == "unsafe_ratio=1.000");
  CHECK(ratio == 1.0);
  CHECK(file_exists(d.sub("eval_report.json")));
  const std::string rep = read_file(d.sub("eval_report.json"));
  CHECK(rep.find("\"policy\": \"zero\"") != std::string::npos);
  CHECK(rep.find("\"audit\": null") != std::string::npos);
}

TEST_CASE("evaluating a synthesized run loads its checkpoints and audits them") {
  RunSpec spec = tiny_spec();
  TempDir run("eval_run");
  spec.out_dir = run.str();
  cmd_synthesize(spec);

  RunSpec espec = tiny_spec();
  espec.run_dir = run.str();
  espec.policy = "ecm";
  std::string line1, line2;
  const int rc = cmd_evaluate(espec, &line1, nullptr);
  CHECK(rc == 0);
  CHECK(line1.rfind("unsafe_ratio=", 0) == 0);
  const std::string rep1 = read_file((run.path / "eval_report.json").string());
  CHECK(rep1.find("\"audit\": null") == std::string::npos);
  CHECK(rep1.find("\"violation_rate\"") != std::string::npos);

  cmd_evaluate(espec, &line2, nullptr);
  CHECK(line1 == line2);
  CHECK(read_file((run.path / "eval_report.json").string()) == rep1);
}

TEST_CASE("evaluate validates its inputs") {
  RunSpec spec = tiny_spec();
  spec.policy = "pid";
  CHECK_THROWS_AS(cmd_evaluate(spec, nullptr, nullptr), ConfigError);
  spec.policy = "ecm";
  spec.run_dir.clear();
  CHECK_THROWS_AS(cmd_evaluate(spec, nullptr, nullptr), ConfigError);
  TempDir empty("eval_empty");
  spec.run_dir = empty.str();
  CHECK_THROWS(cmd_evaluate(spec, nullptr, nullptr));  // no checkpoints present
}

TEST_CASE("a sweep covers its whole grid and collapses the no-model rows") {
  RunSpec spec = tiny_spec();
  TempDir d("sweep");
  spec.out_dir = d.str();
  spec.sweep_budgets = {12, 24};
  spec.sweep_seeds = {1};
  const int rc = cmd_sweep(spec);
  CHECK(rc == 0);
  const std::string csv = read_file(d.sub("sweep.csv"));
  CHECK(csv.rfind("benchmark,strategy,n_samples,unsafe_ratio,seed\n", 0) == 0);
  int rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 1 + 2 * 2 * 1 + 1);  // header + {adaptive,uniform} x budgets + nogp
  CHECK(csv.find("adaptive,12,") != std::string::npos);
  CHECK(csv.find("uniform,24,") != std::string::npos);
  CHECK(csv.find("nogp,0,") != std::string::npos);
  CHECK(file_exists((d.path / "adaptive_b12_s1" / "manifest.json").string()));
  CHECK(file_exists((d.path / "nogp_s1" / "eval_report.json").string()));

  spec.sweep_budgets = {1};
  CHECK_THROWS_AS(cmd_sweep(spec), ConfigError);
  spec.sweep_budgets.clear();
  CHECK_THROWS_AS(cmd_sweep(spec), ConfigError);
}

TEST_CASE("density runs histogram every dataset into its own file") {
  RunSpec spec = tiny_spec();
  TempDir d("density");
  spec.out_dir = d.str();

  PerceptionDataset data(4);
  data.add(Vec{{0.0, 0.0, 0.0, 1.0}}, Vec{{0.1, 0.1, 0.0, 1.0}});
  data.add(Vec{{1.0, 1.0, 0.5, 1.5}}, Vec{{1.1, 0.9, 0.5, 1.5}});
  atomic_write(d.sub("first.csv"), data.to_csv());
  atomic_write(d.sub("second.csv"), data.to_csv());

  spec.density_datasets = {d.sub("first.csv"), d.sub("second.csv")};
  const int rc = cmd_density(spec);
  CHECK(rc == 0);
  CHECK(file_exists(d.sub("density_first.csv")));
  CHECK(file_exists(d.sub("density_second.csv")));

  spec.benchmark = "cartpole";  // 4D as well, but a different state box is fine
  spec.density_datasets = {d.sub("first.csv")};
  CHECK(cmd_density(spec) == 0);

  PerceptionDataset bad(2);
  bad.add(Vec{{0.0, 0.0}}, Vec{{0.1, 0.1}});
  atomic_write(d.sub("bad.csv"), bad.to_csv());
  spec.density_datasets = {d.sub("bad.csv")};
  CHECK_THROWS_AS(cmd_density(spec), ConfigError);
}
