#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcbf.h"

namespace {

using nlohmann::ordered_json;

ordered_json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file \"" << path << "\"\n";
    std::exit(1);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    ordered_json doc = ordered_json::parse(buf.str());
    if (!doc.is_object()) throw std::runtime_error("config root must be an object");
    return doc;
  } catch (const std::exception& e) {
    std::cerr << "error: bad config file \"" << path << "\": " << e.what() << "\n";
    std::exit(1);
  }
}

// Benchmark recorded by a previous synthesize run, so `evaluate --run DIR`
// works without repeating it.
std::string benchmark_from_manifest(const std::string& run_dir) {
  std::ifstream in(run_dir + "/manifest.json");
  if (!in) return "";
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    const ordered_json doc = ordered_json::parse(buf.str());
    if (doc.contains("benchmark") && doc["benchmark"].is_string())
      return doc["benchmark"].get<std::string>();
  } catch (const std::exception&) {
  }
  return "";
}

int fail_with_last_error() {
  std::cerr << "error: " << pcbf_last_error() << "\n";
  return 1;
}

// count() throws when the option was never registered on this subcommand
bool given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesis and evaluation of safety certificates for controllers that act "
               "on imperfect state measurements"};
  app.set_version_flag("--version", pcbf_version());

  std::string config_path, benchmark, strategy, out_dir, run_dir, policy;
  std::uint64_t seed = 0;
  long long budget = 0;
  int iterations = 0, initial_n = 0, episodes = 0, jobs = 0, bins = 0;
  std::vector<long long> budgets;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> datasets;
  std::vector<int> dims;

  auto* syn = app.add_subcommand("synthesize",
                                 "Fit the measurement-error model and train a certified "
                                 "controller/barrier pair");
  syn->add_option("--config", config_path, "JSON config file");
  syn->add_option("--benchmark", benchmark, "dubins, cartpole, or lanekeep");
  syn->add_option("--strategy", strategy, "adaptive, uniform, or nogp");
  syn->add_option("--seed", seed, "run seed");
  syn->add_option("--out", out_dir, "output directory");
  syn->add_option("--budget", budget, "cap on perception samples for the dataset");
  syn->add_option("--iterations", iterations, "maximum synthesis iterations");
  syn->add_option("--initial-n", initial_n, "initial perception samples");

  auto* ev = app.add_subcommand("evaluate",
                                "Roll out a synthesized controller from critical initial "
                                "states and report the unsafe ratio");
  ev->add_option("--config", config_path, "JSON config file");
  ev->add_option("--run", run_dir, "directory produced by synthesize");
  ev->add_option("--benchmark", benchmark, "benchmark (defaults to the run manifest)");
  ev->add_option("--policy", policy, "ecm (default) or zero");
  ev->add_option("--seed", seed, "evaluation seed");
  ev->add_option("--episodes", episodes, "number of episodes");
  ev->add_option("--out", out_dir, "report directory (defaults to the run directory)");

  auto* sw = app.add_subcommand("sweep",
                                "Synthesize and evaluate every strategy across sample "
                                "budgets and seeds");
  sw->add_option("--config", config_path, "JSON config file");
  sw->add_option("--benchmark", benchmark, "dubins, cartpole, or lanekeep");
  sw->add_option("--budgets", budgets, "sample budgets")->delimiter(',');
  sw->add_option("--seeds", seeds, "run seeds")->delimiter(',');
  sw->add_option("--seed", seed, "fallback seed when --seeds is not given");
  sw->add_option("--out", out_dir, "output directory");
  sw->add_option("--jobs", jobs, "parallel synthesis jobs");
  sw->add_option("--episodes", episodes, "evaluation episodes per cell");

  auto* de = app.add_subcommand("density",
                                "Histogram the true states of perception dataset CSVs "
                                "over two state dimensions");
  de->add_option("--config", config_path, "JSON config file");
  de->add_option("--benchmark", benchmark, "benchmark whose state box sets the range");
  de->add_option("--datasets", datasets, "dataset CSV paths")->delimiter(',');
  de->add_option("--bins", bins, "bins per dimension");
  de->add_option("--dims", dims, "the two state dimensions to histogram")->delimiter(',');
  de->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* sub = nullptr;
  for (CLI::App* s : {syn, ev, sw, de})
    if (s->parsed()) sub = s;
  if (sub == nullptr) {
    std::cerr << app.help();
    return 1;
  }

  ordered_json cfg = config_path.empty() ? ordered_json::object() : load_config_file(config_path);
  if (given(sub, "--benchmark")) cfg["benchmark"] = benchmark;
  if (given(sub, "--seed")) cfg["seed"] = seed;
  if (given(sub, "--out")) cfg["out"] = out_dir;

  if (sub == syn) {
    if (sub->count("--strategy")) cfg["strategy"] = strategy;
    if (sub->count("--budget")) cfg["adaptive"]["sample_budget"] = budget;
    if (sub->count("--iterations")) cfg["adaptive"]["max_iterations"] = iterations;
    if (sub->count("--initial-n")) cfg["adaptive"]["initial_n"] = initial_n;
    const std::string merged = cfg.dump();
    const pcbf_status st = pcbf_synthesize(merged.c_str());
    if (st == PCBF_OK) {
      std::printf("outcome=success\n");
      return 0;
    }
    if (st == PCBF_SYNTH_HARD) {
      std::printf("outcome=failure\n");
      return 2;
    }
    return fail_with_last_error();
  }

  if (sub == ev) {
    if (sub->count("--run")) cfg["evaluate"]["run"] = run_dir;
    if (sub->count("--policy")) cfg["evaluate"]["policy"] = policy;
    if (sub->count("--episodes")) cfg["eval"]["episodes"] = episodes;
    if (!cfg.contains("benchmark")) {
      std::string from_run;
      if (cfg.contains("evaluate") && cfg["evaluate"].contains("run"))
        from_run = benchmark_from_manifest(cfg["evaluate"]["run"].get<std::string>());
      if (!from_run.empty()) cfg["benchmark"] = from_run;
    }
    const std::string merged = cfg.dump();
    char line[128] = {0};
    double ratio = 0.0;
    const pcbf_status st = pcbf_evaluate(merged.c_str(), &ratio, line, sizeof(line));
    if (st != PCBF_OK) return fail_with_last_error();
    std::printf("%s\n", line);
    return 0;
  }

  if (sub == sw) {
    if (sub->count("--budgets")) {
      cfg["sweep"]["budgets"] = budgets;
    }
    if (sub->count("--seeds")) {
      cfg["sweep"]["seeds"] = seeds;
    }
    if (sub->count("--jobs")) cfg["jobs"] = jobs;
    if (sub->count("--episodes")) cfg["eval"]["episodes"] = episodes;
    const std::string merged = cfg.dump();
    const pcbf_status st = pcbf_sweep(merged.c_str());
    if (st != PCBF_OK) return fail_with_last_error();
    return 0;
  }

  // density
  if (sub->count("--datasets")) cfg["density"]["datasets"] = datasets;
  if (sub->count("--bins")) cfg["density"]["bins"] = bins;
  if (sub->count("--dims")) cfg["density"]["dims"] = dims;
  const std::string merged = cfg.dump();
  const pcbf_status st = pcbf_density(merged.c_str());
  if (st != PCBF_OK) return fail_with_last_error();
  return 0;
}
