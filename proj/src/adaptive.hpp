#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "confidence.hpp"
#include "dynamics.hpp"
#include "gp.hpp"
#include "training.hpp"
#include "types.hpp"

namespace pcbf {

enum class Strategy {
  adaptive,  // augment the perception dataset at hard measurements
  uniform,   // augment with fresh uniform states, same budget
  nogp,      // no perception model at all; identity set estimate
};

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct AdaptiveConfig {
  Strategy strategy = Strategy::adaptive;
  int max_iterations = 6;
  int initial_n = 100;
  double hard_threshold = 1e-3;
  double dedupe_radius = -1.0;   // <= 0 selects 0.05 * diameter(state space)
  int max_new_per_iter = 64;     // cap on kept hard samples per iteration
  long long sample_budget = -1;  // total perception calls for the dataset; <= 0 unlimited
  GpFitConfig gp;
  EstimatorConfig estimator;
};

struct IterationReport {
  int index = 0;
  long long dataset_size = 0;   // perception calls consumed so far
  int dataset_rows = 0;         // distinct rows after duplicate merging
  bool gp_fitted = false;
  LossBreakdown loss;
  int hard_raw = 0;
  int hard_kept = 0;
  int flagged_entries = 0;
  double wall_seconds = 0.0;
};

struct RunOutcome {
  bool success = false;
  std::vector<IterationReport> reports;
  std::vector<Vec> hard_remaining;       // measurements still violating on failure
  MlpParams barrier;
  MlpParams controller;
  std::shared_ptr<const HetGpModel> model;  // null when no perception model was fit
  PerceptionDataset data;
  std::vector<std::string> dataset_csvs;    // per-iteration dataset snapshots
  std::vector<std::string> train_log_csvs;  // per-iteration epoch logs
  std::vector<std::string> barrier_jsons;     // per-iteration checkpoints
  std::vector<std::string> controller_jsons;  // per-iteration checkpoints
};

/// Draw n uniform states and pair each with its measurement.
PerceptionDataset init_dataset(const SystemModel& sys, int n, Rng& rng);

/// Add one perception pair per hard measurement, taken at the estimated-set
/// center (clipped to the state space).
void augment(PerceptionDataset& data, const std::vector<Vec>& hard,
             const SetEstimator& est, const SystemModel& sys);

/// The synthesis loop: fit the perception model, train the certificate pair,
/// collect violating measurements, and augment until none remain or the
/// iteration budget runs out.
RunOutcome run_synthesis(const SystemModel& sys, const AdaptiveConfig& acfg,
                         const TrainConfig& tcfg, std::uint64_t seed);

}  // namespace pcbf
