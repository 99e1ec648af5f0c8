#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "types.hpp"

namespace pcbf {

/// Squared-exponential kernel with one lengthscale per input dimension.
struct KernelParams {
  double signal_variance = 1.0;
  Vec lengthscales;
};

double kernel_eval(const KernelParams& kp, const Vec& a, const Vec& b);

/// Pairs of (measured state, true state). Rows whose measured states
/// coincide within 1e-9 are merged by running-averaging the true states.
class PerceptionDataset {
 public:
  PerceptionDataset() = default;
  explicit PerceptionDataset(int dim);

  void add(const Vec& perceived, const Vec& actual);
  int size() const { return static_cast<int>(perceived_.rows()); }
  int dim() const { return static_cast<int>(perceived_.cols()); }

  const Mat& perceived() const { return perceived_; }
  const Mat& actual() const { return actual_; }

  /// Regression targets: actual minus measured, one column per dimension.
  Mat errors() const { return actual_ - perceived_; }

  /// CSV with header xhat0..xhat{n-1},x0..x{n-1}.
  std::string to_csv() const;
  static PerceptionDataset from_csv(const std::string& content);

  /// Reorder rows (testing hook; predictions are order-invariant).
  PerceptionDataset permuted(const std::vector<int>& order) const;

 private:
  Mat perceived_;
  Mat actual_;
  std::vector<int> merge_counts_;
};

struct GpFitConfig {
  std::uint64_t seed = 0;
  int ascent_iters = 200;   // gradient-ascent iterations for the initial fit
  int refit_iters = 50;     // iterations per refinement round (warm-started)
  double step = 0.01;       // ascent step on log-parameters
  int rounds = 3;           // noise-model refinement rounds
  int posterior_draws = 20; // draws used for the empirical noise estimate
};

/// Everything needed to reconstruct one output dimension of the model.
struct GpDimSpec {
  KernelParams mean_kernel;
  KernelParams noise_kernel;
  double noise_gp_noise_var = 1e-4;
  Vec targets;            // observed errors for this dimension
  Vec log_noise_targets;  // empirical log-noise values at the inputs
  double log_noise_offset = 0.0;  // prior mean of the log-noise process
};

/// Per-dimension Gaussian-process regression of the perception error with an
/// input-dependent noise level. The noise level itself is the exponential of
/// a second GP fitted to empirical log-noise estimates.
class HetGpModel {
 public:
  HetGpModel() = default;
  HetGpModel(Mat inputs, std::vector<GpDimSpec> dims);

  static HetGpModel fit(const PerceptionDataset& data, const GpFitConfig& cfg);

  /// Posterior mean and standard deviation of the error at a query point.
  /// The variance includes the predicted noise level, so it stays positive
  /// far from data (reverting to signal variance plus average noise).
  void predict(const Vec& xhat, Vec& mean, Vec& std_dev) const;

  int dim() const { return static_cast<int>(dims_.size()); }
  int count() const { return static_cast<int>(inputs_.rows()); }
  const Mat& inputs() const { return inputs_; }
  const std::vector<GpDimSpec>& dim_specs() const { return specs_; }

  /// Number of variance values clamped to the positivity floor so far.
  long clamp_count() const { return clamp_count_; }

  std::string to_json() const;
  static HetGpModel from_json(const std::string& text);

 private:
  struct DimState {
    Eigen::LLT<Mat> chol;        // K + K_N + jitter
    Vec alpha;                   // (K + K_N)^{-1} targets
    Eigen::LLT<Mat> noise_chol;  // K_z + noise_gp_noise_var I + jitter
    Vec noise_alpha;
  };

  Mat inputs_;
  std::vector<GpDimSpec> specs_;
  std::vector<DimState> dims_;
  mutable long clamp_count_ = 0;
};

/// Marginal likelihood of the targets under kernel kp plus homoscedastic
/// noise. Exposed for tests and diagnostics.
double log_marginal_likelihood(const Mat& inputs, const Vec& targets,
                               const KernelParams& kp, double noise_var);

/// Maximize the marginal likelihood over (signal variance, lengthscales,
/// noise variance) by safeguarded gradient ascent on log-parameters.
/// Lengthscales are clamped to [1e-3, 1e3]. Monotone: never returns
/// parameters with a lower marginal likelihood than the initial ones.
void fit_homoscedastic(const Mat& inputs, const Vec& targets,
                       KernelParams& kp, double& noise_var,
                       int iters = 200, double step = 0.01);

/// Count of completed heteroscedastic fits (used to verify that baselines
/// which must not touch the estimator really do not).
long het_fit_count();
void reset_het_fit_count();

}  // namespace pcbf
