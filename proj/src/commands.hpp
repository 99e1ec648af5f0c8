#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptive.hpp"
#include "evaluation.hpp"

namespace pcbf {

/// Fully resolved run configuration. The CLI merges a config file and flag
/// overrides into one JSON object and hands it to the library; paths are
/// carried here but never echoed into result files, so reruns with the same
/// seed produce byte-identical outputs wherever they are written.
struct RunSpec {
  std::string benchmark = "dubins";
  Strategy strategy = Strategy::adaptive;
  std::uint64_t seed = 0;
  std::string out_dir;

  AdaptiveConfig adaptive;
  TrainConfig train;
  EvalConfig eval;
  int audit_queries = 2000;
  int audit_inner = 64;

  // sweep
  std::vector<long long> sweep_budgets;
  std::vector<std::uint64_t> sweep_seeds;
  int jobs = 1;

  // evaluate
  std::string run_dir;
  std::string policy = "ecm";  // ecm | zero

  // density
  int density_bins = 10;
  int density_dim_i = 0;
  int density_dim_j = 1;
  std::vector<std::string> density_datasets;
};

RunSpec runspec_from_json(const std::string& text);

/// Echo of the semantic configuration (no paths), used in manifests.
std::string runspec_config_json(const RunSpec& spec);

/// Run synthesis and write controller.json, barrier.json, estimator.json,
/// per-iteration dataset/train-log files, manifest.json, and (on failure)
/// hard_samples.json under spec.out_dir. Returns 0 on success, 2 when hard
/// measurements remain.
int cmd_synthesize(const RunSpec& spec);

/// Evaluate a synthesized controller (or the zero policy) on critical
/// initial states; writes eval_report.json and appends the stdout line
/// "unsafe_ratio=<value>" to stdout_line. Returns 0.
int cmd_evaluate(const RunSpec& spec, std::string* stdout_line,
                 double* unsafe_out = nullptr);

/// Synthesize and evaluate each (strategy, budget, seed) cell and write
/// sweep.csv. Cells that raise errors record NA. Returns 0.
int cmd_sweep(const RunSpec& spec);

/// Histogram the actual states of perception dataset CSVs over two state
/// dimensions of the benchmark's state box. Returns 0.
int cmd_density(const RunSpec& spec);

}  // namespace pcbf
