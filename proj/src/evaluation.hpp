#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "confidence.hpp"
#include "dynamics.hpp"
#include "gp.hpp"
#include "mlp.hpp"
#include "types.hpp"

namespace pcbf {

struct EvalConfig {
  int episodes = 500;
  double horizon_s = 10.0;
  double critical_exit_s = 1.0;    // zero-control exit window defining critical states
  long long max_draws = 1000000;   // total rejection-sampling budget
  std::uint64_t seed = 0;
};

enum class EpisodeOutcome { safe, exited_safe_set, exited_state_space, blowup };

const char* outcome_name(EpisodeOutcome o);

struct EpisodeResult {
  EpisodeOutcome outcome = EpisodeOutcome::safe;
  int steps = 0;             // steps completed before exit (or total steps if safe)
  double min_barrier = 0.0;  // min h along the trajectory; NaN without a barrier
};

/// Policy evaluated on the perceived state.
using PerceivedPolicy = std::function<Vec(const Vec&)>;

PerceivedPolicy zero_policy(const SystemModel& sys);

/// Roll out under the policy (fed perceived states) and classify the episode.
EpisodeResult run_episode(const SystemModel& sys, const Vec& x0,
                          const PerceivedPolicy& policy, double horizon_s,
                          const MlpParams* barrier);

/// Rejection-sample an initial state from the safe set whose zero-control
/// rollout leaves the safe set within the exit window. `attempts` counts
/// draws consumed from the shared budget.
Vec sample_critical_initial(const SystemModel& sys, const EvalConfig& cfg, Rng& rng,
                            long long& attempts);

struct EvalReport {
  int episodes = 0;
  double unsafe_ratio = 0.0;
  long long critical_draws = 0;
  double mean_min_barrier_safe = 0.0;  // NaN when no barrier or no safe episode
  std::vector<EpisodeResult> results;
};

EvalReport evaluate_policy(const SystemModel& sys, const PerceivedPolicy& policy,
                           const MlpParams* barrier, const EvalConfig& cfg);

struct AuditReport {
  long long checked = 0;
  long long violations = 0;
  double violation_rate = 0.0;
  double worst_residual = 0.0;  // most negative residual seen
};

/// Monte Carlo check of the certificate condition at fresh measurements.
/// Inner samples per query are drawn sequentially from a per-query stream, so
/// results for a smaller inner count are a prefix of a larger one.
AuditReport audit_cbf(const SystemModel& sys, const MlpParams& barrier,
                      const MlpParams& controller, const SetEstimator& est,
                      int queries, int inner, double alpha_slope, std::uint64_t seed);

struct DensityGrid {
  int bins = 10;
  int dim_i = 0;
  int dim_j = 1;
  double lo_i = 0.0, hi_i = 0.0;
  double lo_j = 0.0, hi_j = 0.0;
  Eigen::MatrixXi counts;  // rows index dim_i bins, cols index dim_j bins

  std::string to_csv() const;
};

/// Histogram the actual-state rows of a perception dataset over two state
/// dimensions; out-of-range points land in the edge bins.
DensityGrid density_histogram(const PerceptionDataset& data, int dim_i, int dim_j,
                              int bins, const Box& range);

}  // namespace pcbf
