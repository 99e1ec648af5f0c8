#pragma once

#include <memory>

#include "gp.hpp"
#include "types.hpp"

namespace pcbf {

/// Regularized lower incomplete gamma function P(a, x).
double gamma_p(double a, double x);

/// Quantile of the chi-squared distribution with `dof` degrees of freedom,
/// solved by bisection to absolute tolerance 1e-10.
double chi2_quantile(int dof, double p);

/// Axis-aligned ellipsoid { c + diag(s) y : |y| <= 1 }.
struct Ellipsoid {
  Vec center;
  Vec semiaxes;

  /// Boundary-inclusive membership.
  bool contains(const Vec& x) const;

  /// Uniform draw from the interior (direction from normals, radius by the
  /// usual u^(1/n) law, then scaled per axis).
  Vec sample_uniform(Rng& rng) const;

  double volume() const;
};

struct EstimatorConfig {
  double delta = 0.95;        // joint confidence level across dimensions
  double min_semiaxis = 1e-4; // degenerate-width floor
};

/// Ellipsoid containing the true state with (approximate) probability delta
/// when the error posterior at `xhat` has the given mean and per-axis
/// standard deviation.
Ellipsoid ellipsoid_from_moments(const Vec& xhat, const Vec& mean, const Vec& std_dev,
                                 const EstimatorConfig& cfg);

/// Maps a measured state to a confidence set for the true state.
class SetEstimator {
 public:
  virtual ~SetEstimator() = default;
  virtual Ellipsoid estimate(const Vec& xhat) const = 0;
  Vec center(const Vec& xhat) const { return estimate(xhat).center; }
  virtual int dim() const = 0;
};

/// Estimator backed by a fitted heteroscedastic GP.
class GpSetEstimator : public SetEstimator {
 public:
  GpSetEstimator(std::shared_ptr<const HetGpModel> model, EstimatorConfig cfg);
  Ellipsoid estimate(const Vec& xhat) const override;
  int dim() const override { return model_->dim(); }
  const HetGpModel& model() const { return *model_; }
  const EstimatorConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const HetGpModel> model_;
  EstimatorConfig cfg_;
  double radius_;  // sqrt of the chi-squared quantile, cached
};

/// Degenerate estimator that trusts the measurement: the confidence set is
/// the floor-width box around xhat itself. Used by the no-estimator baseline.
class IdentitySetEstimator : public SetEstimator {
 public:
  IdentitySetEstimator(int dim, double min_semiaxis = 1e-4)
      : dim_(dim), min_semiaxis_(min_semiaxis) {}
  Ellipsoid estimate(const Vec& xhat) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
  double min_semiaxis_;
};

}  // namespace pcbf
