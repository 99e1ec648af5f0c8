#pragma once

#include <cstdint>
#include <vector>

#include "confidence.hpp"
#include "dynamics.hpp"
#include "mlp.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace pcbf {

struct TrainConfig {
  int m1 = 10000;          // measurement draws per training set
  int m2 = 32;             // true-state samples per measurement
  double lambda1 = 0.01;   // weight on the certificate-condition term
  double lambda2 = 1.0;    // weight on the safe-set classification term
  double alpha_slope = 0.1;
  int epochs = 30;
  double learning_rate = 0.1;
  int batch_size = 256;    // measurement entries per SGD step
  int hidden = 128;
  std::uint64_t seed = 0;
};

/// Certificate training set: one entry per measurement draw, with the
/// estimated-set center, inner true-state samples clipped to the state
/// space, and the dynamics terms precomputed at each inner sample.
struct CertTrainingSet {
  int m1 = 0;
  int m2 = 0;
  int state_dim = 0;
  int control_dim = 0;
  Mat queries;    // m1 x n measurement draws
  Mat centers;    // m1 x n estimated-set centers (clipped to the state space)
  Mat inner;      // (m1*m2) x n true-state samples
  Mat drift;      // (m1*m2) x n drift at each inner sample
  Mat control;    // (m1*m2) x (n*m) control matrix rows, entry (d,k) at column d*m+k
  std::vector<std::uint8_t> inside;  // safe-set membership per inner sample
  long long clipped_samples = 0;     // inner samples moved by the state-space clip
  int flagged_entries = 0;           // entries with more than 20% clipped samples

  Eigen::Index rows() const { return inner.rows(); }
};

CertTrainingSet build_training_set(const SystemModel& sys, const SetEstimator& est,
                                   const TrainConfig& cfg, Rng& rng);

struct LossBreakdown {
  double total = 0.0;
  double cbf_term = 0.0;  // mean hinge on the certificate condition
  double set_term = 0.0;  // mean signed barrier classification term
  long long violation_count = 0;
};

struct EpochRow {
  int epoch = 0;
  LossBreakdown loss;
};

/// Certificate residual at one inner sample: grad h(x) . f(x, pi(c)) +
/// alpha * h(x). The measurement itself only fixes dimensions; the control
/// is evaluated at the set center.
double cbf_residual(const MlpParams& barrier, const MlpParams& controller,
                    const Vec& query, const Vec& center, const Vec& x,
                    const SystemModel& sys, double alpha_slope);

/// Signed classification term for one true-state sample: -h(x) inside the
/// safe set (minimizing pulls h positive there), +h(x) outside (pushes h
/// negative).
double set_loss_term(const MlpParams& barrier, const Vec& x, const SystemModel& sys);

/// Full-dataset loss (no gradients).
LossBreakdown evaluate_loss(const MlpParams& barrier, const MlpParams& controller,
                            const CertTrainingSet& set, const TrainConfig& cfg);

/// Minibatch SGD on both networks over a prebuilt training set. Appends one
/// row per epoch to `log` and returns the final full-dataset loss.
LossBreakdown train_on_set(const CertTrainingSet& set, const TrainConfig& cfg,
                           MlpParams& barrier, MlpParams& controller, Rng& rng,
                           std::vector<EpochRow>& log);

/// Convenience wrapper: builds the training set from the estimator, then
/// trains. Uses cfg.seed for both sampling and shuffling.
LossBreakdown train(const SystemModel& sys, const SetEstimator& est, const TrainConfig& cfg,
                    MlpParams& barrier, MlpParams& controller, std::vector<EpochRow>& log);

/// Measurement entries whose worst inner-sample hinge exceeds the threshold,
/// deduplicated greedily (keep the worst, drop later entries within the
/// radius) and truncated to max_keep. raw_count reports the pre-dedupe count.
std::vector<Vec> collect_hard_samples(const MlpParams& barrier, const MlpParams& controller,
                                      const CertTrainingSet& set, const TrainConfig& cfg,
                                      double threshold, double dedupe_radius, int max_keep,
                                      int* raw_count);

std::string train_log_csv(const std::vector<EpochRow>& log);

}  // namespace pcbf
