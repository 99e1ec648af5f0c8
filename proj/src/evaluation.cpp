#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"

namespace pcbf {

const char* outcome_name(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::safe: return "safe";
    case EpisodeOutcome::exited_safe_set: return "exited_safe_set";
    case EpisodeOutcome::exited_state_space: return "exited_state_space";
    case EpisodeOutcome::blowup: return "blowup";
  }
  return "safe";
}

PerceivedPolicy zero_policy(const SystemModel& sys) {
  const int m = sys.control_dim;
  return [m](const Vec&) { return Vec::Zero(m).eval(); };
}

EpisodeResult run_episode(const SystemModel& sys, const Vec& x0,
                          const PerceivedPolicy& policy, double horizon_s,
                          const MlpParams* barrier) {
  EpisodeResult res;
  res.min_barrier = std::numeric_limits<double>::quiet_NaN();
  Vec x = x0;
  if (barrier != nullptr) res.min_barrier = mlp_forward(*barrier, x)(0);
  const int steps = static_cast<int>(std::ceil(horizon_s / sys.dt - 1e-9));
  for (int k = 0; k < steps; ++k) {
    Vec u;
    try {
      u = policy(perceive(sys, x));
      x = integrate_step(sys, x, u);
    } catch (const IntegrationBlowup&) {
      res.outcome = EpisodeOutcome::blowup;
      res.steps = k;
      return res;
    }
    if (!in_state_space(sys, x)) {
      res.outcome = EpisodeOutcome::exited_state_space;
      res.steps = k + 1;
      return res;
    }
    if (!in_safe_set(sys, x)) {
      res.outcome = EpisodeOutcome::exited_safe_set;
      res.steps = k + 1;
      return res;
    }
    if (barrier != nullptr)
      res.min_barrier = std::min(res.min_barrier, mlp_forward(*barrier, x)(0));
  }
  res.outcome = EpisodeOutcome::safe;
  res.steps = steps;
  return res;
}

Vec sample_critical_initial(const SystemModel& sys, const EvalConfig& cfg, Rng& rng,
                            long long& attempts) {
  const PerceivedPolicy zero = zero_policy(sys);
  while (attempts < cfg.max_draws) {
    ++attempts;
    const Vec x0 = sys.safe_bounds.sample(rng);
    const EpisodeResult r = run_episode(sys, x0, zero, cfg.critical_exit_s, nullptr);
    if (r.outcome != EpisodeOutcome::safe) return x0;
  }
  throw ConfigError(
      "critical-state sampling exhausted its draw budget; acceptance rate is too low");
}

EvalReport evaluate_policy(const SystemModel& sys, const PerceivedPolicy& policy,
                           const MlpParams* barrier, const EvalConfig& cfg) {
  if (cfg.episodes <= 0) throw ConfigError("episodes must be positive");
  if (cfg.horizon_s <= 0.0 || cfg.critical_exit_s <= 0.0)
    throw ConfigError("horizons must be positive");
  Rng root(cfg.seed);
  EvalReport rep;
  rep.episodes = cfg.episodes;
  long long attempts = 0;
  int unsafe = 0;
  double barrier_sum = 0.0;
  int safe_count = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    Rng stream = root.derive(1000 + static_cast<std::uint64_t>(ep));
    const Vec x0 = sample_critical_initial(sys, cfg, stream, attempts);
    const EpisodeResult res = run_episode(sys, x0, policy, cfg.horizon_s, barrier);
    if (res.outcome != EpisodeOutcome::safe) {
      ++unsafe;
    } else if (barrier != nullptr) {
      barrier_sum += res.min_barrier;
      ++safe_count;
    }
    rep.results.push_back(res);
  }
  rep.unsafe_ratio = static_cast<double>(unsafe) / cfg.episodes;
  rep.critical_draws = attempts;
  rep.mean_min_barrier_safe = safe_count > 0
                                  ? barrier_sum / safe_count
                                  : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

AuditReport audit_cbf(const SystemModel& sys, const MlpParams& barrier,
                      const MlpParams& controller, const SetEstimator& est,
                      int queries, int inner, double alpha_slope, std::uint64_t seed) {
  if (queries <= 0 || inner <= 0)
    throw ContractViolation("audit_cbf: counts must be positive");
  const int n = sys.state_dim;
  Rng root(seed);
  AuditReport rep;
  rep.worst_residual = std::numeric_limits<double>::infinity();
  Mat xs(inner, n);
  Mat flow(inner, n);
  BarrierBatch bb;
  for (int q = 0; q < queries; ++q) {
    Rng stream = root.derive(2000 + static_cast<std::uint64_t>(q));
    const Vec query = sys.state_bounds.sample(stream);
    const Ellipsoid ell = est.estimate(query);
    const Vec c = sys.state_bounds.clamp(ell.center);
    const Vec u = mlp_forward(controller, c);
    for (int j = 0; j < inner; ++j) {
      const Vec x = sys.state_bounds.clamp(ell.sample_uniform(stream));
      xs.row(j) = x.transpose();
      flow.row(j) = vector_field(sys, x, u).transpose();
    }
    barrier_forward(barrier, xs, bb);
    barrier_tangent(barrier, flow, bb);
    for (int j = 0; j < inner; ++j) {
      const double r = bb.phi(j) + alpha_slope * bb.h(j);
      ++rep.checked;
      if (r < 0.0) ++rep.violations;
      rep.worst_residual = std::min(rep.worst_residual, r);
    }
  }
  rep.violation_rate = static_cast<double>(rep.violations) / rep.checked;
  return rep;
}

std::string DensityGrid::to_csv() const {
  std::ostringstream out;
  out << "# dim_i " << dim_i << " range " << dec_string(lo_i) << ' ' << dec_string(hi_i)
      << '\n';
  out << "# dim_j " << dim_j << " range " << dec_string(lo_j) << ' ' << dec_string(hi_j)
      << '\n';
  out << "# rows: dim_i bins, cols: dim_j bins\n";
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    for (Eigen::Index c = 0; c < counts.cols(); ++c) {
      if (c > 0) out << ',';
      out << counts(r, c);
    }
    out << '\n';
  }
  return out.str();
}

DensityGrid density_histogram(const PerceptionDataset& data, int dim_i, int dim_j,
                              int bins, const Box& range) {
  if (bins <= 0) throw ContractViolation("density_histogram: bins must be positive");
  if (dim_i < 0 || dim_i >= data.dim() || dim_j < 0 || dim_j >= data.dim())
    throw ContractViolation("density_histogram: dimension out of range");
  if (dim_i >= range.dim() || dim_j >= range.dim())
    throw ContractViolation("density_histogram: range box too small");
  DensityGrid grid;
  grid.bins = bins;
  grid.dim_i = dim_i;
  grid.dim_j = dim_j;
  grid.lo_i = range.lo(dim_i);
  grid.hi_i = range.hi(dim_i);
  grid.lo_j = range.lo(dim_j);
  grid.hi_j = range.hi(dim_j);
  grid.counts = Eigen::MatrixXi::Zero(bins, bins);
  const double wi = (grid.hi_i - grid.lo_i) / bins;
  const double wj = (grid.hi_j - grid.lo_j) / bins;
  if (wi <= 0.0 || wj <= 0.0)
    throw ContractViolation("density_histogram: range must have positive width");
  const Mat& actual = data.actual();
  for (Eigen::Index r = 0; r < actual.rows(); ++r) {
    int bi = static_cast<int>(std::floor((actual(r, dim_i) - grid.lo_i) / wi));
    int bj = static_cast<int>(std::floor((actual(r, dim_j) - grid.lo_j) / wj));
    bi = std::clamp(bi, 0, bins - 1);
    bj = std::clamp(bj, 0, bins - 1);
    grid.counts(bi, bj) += 1;
  }
  return grid;
}

}  // namespace pcbf
