#include "confidence.hpp"

#include <cmath>

namespace pcbf {

namespace {

// Series expansion of P(a,x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 500; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a,x) = 1 - P(a,x), valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double gamma_p(double a, double x) {
  if (a <= 0.0) throw ContractViolation("gamma_p: a must be positive");
  if (x < 0.0) throw ContractViolation("gamma_p: x must be non-negative");
  if (x == 0.0) return 0.0;
  return x < a + 1.0 ? gamma_p_series(a, x) : 1.0 - gamma_q_cf(a, x);
}

double chi2_quantile(int dof, double p) {
  if (dof < 1 || dof > 16)
    throw ContractViolation("chi2_quantile: dof must be in [1, 16]");
  if (p <= 0.0 || p >= 1.0) throw ContractViolation("chi2_quantile: p must be in (0, 1)");
  const double a = 0.5 * dof;
  auto cdf = [a](double q) { return gamma_p(a, 0.5 * q); };
  double hi = dof + 10.0 * std::sqrt(2.0 * dof) + 10.0;
  while (cdf(hi) < p) hi *= 2.0;
  double lo = 0.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

bool Ellipsoid::contains(const Vec& x) const {
  if (x.size() != center.size()) throw ContractViolation("Ellipsoid::contains: dimension mismatch");
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double r = (x[i] - center[i]) / semiaxes[i];
    s += r * r;
  }
  return s <= 1.0 + 1e-12;
}

Vec Ellipsoid::sample_uniform(Rng& rng) const {
  const int n = static_cast<int>(center.size());
  Vec dir(n);
  double norm2 = 0.0;
  do {
    for (int i = 0; i < n; ++i) dir[i] = rng.normal();
    norm2 = dir.squaredNorm();
  } while (norm2 == 0.0);
  const double r = std::pow(rng.uniform(), 1.0 / n) / std::sqrt(norm2);
  return center + (semiaxes.array() * dir.array() * r).matrix();
}

double Ellipsoid::volume() const {
  const int n = static_cast<int>(center.size());
  const double unit = std::pow(3.14159265358979323846, 0.5 * n) / std::tgamma(0.5 * n + 1.0);
  return unit * semiaxes.prod();
}

Ellipsoid ellipsoid_from_moments(const Vec& xhat, const Vec& mean, const Vec& std_dev,
                                 const EstimatorConfig& cfg) {
  if (mean.size() != xhat.size() || std_dev.size() != xhat.size())
    throw ContractViolation("ellipsoid_from_moments: dimension mismatch");
  const double r = std::sqrt(chi2_quantile(static_cast<int>(xhat.size()), cfg.delta));
  Ellipsoid e;
  e.center = xhat + mean;
  e.semiaxes = (std_dev * r).cwiseMax(cfg.min_semiaxis);
  return e;
}

GpSetEstimator::GpSetEstimator(std::shared_ptr<const HetGpModel> model, EstimatorConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  radius_ = std::sqrt(chi2_quantile(model_->dim(), cfg_.delta));
}

Ellipsoid GpSetEstimator::estimate(const Vec& xhat) const {
  Vec mean, std_dev;
  model_->predict(xhat, mean, std_dev);
  Ellipsoid e;
  e.center = xhat + mean;
  e.semiaxes = (std_dev * radius_).cwiseMax(cfg_.min_semiaxis);
  return e;
}

Ellipsoid IdentitySetEstimator::estimate(const Vec& xhat) const {
  if (xhat.size() != dim_) throw ContractViolation("estimate: dimension mismatch");
  Ellipsoid e;
  e.center = xhat;
  e.semiaxes = Vec::Constant(dim_, min_semiaxis_);
  return e;
}

}  // namespace pcbf
