#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"

namespace pcbf {

namespace {

constexpr double kClipFlagFraction = 0.2;

struct BatchView {
  Mat centers;  // B x n
  Mat xs;       // B*m2 x n
  Mat f0;       // B*m2 x n
  Mat bmat;     // B*m2 x (n*m)
  Vec sign;     // B*m2, +1 outside the safe set, -1 inside
};

void gather(const CertTrainingSet& ts, const std::vector<int>& idx, BatchView& bv) {
  const int b = static_cast<int>(idx.size());
  const int n = ts.state_dim;
  const int m = ts.control_dim;
  const int m2 = ts.m2;
  bv.centers.resize(b, n);
  bv.xs.resize(static_cast<Eigen::Index>(b) * m2, n);
  bv.f0.resize(static_cast<Eigen::Index>(b) * m2, n);
  bv.bmat.resize(static_cast<Eigen::Index>(b) * m2, static_cast<Eigen::Index>(n) * m);
  bv.sign.resize(static_cast<Eigen::Index>(b) * m2);
  for (int s = 0; s < b; ++s) {
    const int i = idx[static_cast<std::size_t>(s)];
    bv.centers.row(s) = ts.centers.row(i);
    const Eigen::Index src = static_cast<Eigen::Index>(i) * m2;
    const Eigen::Index dst = static_cast<Eigen::Index>(s) * m2;
    bv.xs.middleRows(dst, m2) = ts.inner.middleRows(src, m2);
    bv.f0.middleRows(dst, m2) = ts.drift.middleRows(src, m2);
    bv.bmat.middleRows(dst, m2) = ts.control.middleRows(src, m2);
    for (int j = 0; j < m2; ++j)
      bv.sign(dst + j) = ts.inside[static_cast<std::size_t>(src + j)] ? -1.0 : 1.0;
  }
}

struct BatchWork {
  BarrierBatch bb;
  ControllerBatch cb;
  Mat f;  // flow directions at the inner samples
  Vec r;  // certificate residuals
};

void batch_residuals(const MlpParams& barrier, const MlpParams& controller,
                     const BatchView& bv, int m2, int n, int m, double alpha,
                     BatchWork& w) {
  controller_forward(controller, bv.centers, w.cb);
  w.f = bv.f0;
  const Eigen::Index entries = bv.centers.rows();
  for (Eigen::Index b = 0; b < entries; ++b) {
    for (int j = 0; j < m2; ++j) {
      const Eigen::Index row = b * m2 + j;
      for (int d = 0; d < n; ++d) {
        double acc = 0.0;
        for (int k = 0; k < m; ++k) acc += bv.bmat(row, d * m + k) * w.cb.u(b, k);
        w.f(row, d) += acc;
      }
    }
  }
  barrier_forward(barrier, bv.xs, w.bb);
  barrier_tangent(barrier, w.f, w.bb);
  w.r = w.bb.phi + alpha * w.bb.h;
}

void accumulate_loss(const BatchWork& w, const BatchView& bv, double& hinge_sum,
                     double& set_sum, long long& violations) {
  for (Eigen::Index row = 0; row < w.r.size(); ++row) {
    const double r = w.r(row);
    if (r < 0.0) {
      hinge_sum += -r;
      ++violations;
    }
    set_sum += bv.sign(row) * w.bb.h(row);
  }
}

LossBreakdown finish_loss(const TrainConfig& cfg, double hinge_sum, double set_sum,
                          long long violations, double denom) {
  LossBreakdown out;
  out.cbf_term = hinge_sum / denom;
  out.set_term = set_sum / denom;
  out.total = cfg.lambda1 * out.cbf_term + cfg.lambda2 * out.set_term;
  out.violation_count = violations;
  return out;
}

std::string batch_json(int epoch, int step, const std::vector<int>& idx,
                       const LossBreakdown& loss) {
  nlohmann::ordered_json doc;
  doc["epoch"] = epoch;
  doc["step"] = step;
  doc["entries"] = idx;
  doc["total"] = dec_string(loss.total);
  doc["cbf_term"] = dec_string(loss.cbf_term);
  doc["set_term"] = dec_string(loss.set_term);
  return doc.dump();
}

void check_set(const CertTrainingSet& ts) {
  if (ts.m1 <= 0 || ts.m2 <= 0) throw ContractViolation("training set is empty");
  if (ts.inner.rows() != static_cast<Eigen::Index>(ts.m1) * ts.m2)
    throw ContractViolation("training set row count mismatch");
}

}  // namespace

CertTrainingSet build_training_set(const SystemModel& sys, const SetEstimator& est,
                                   const TrainConfig& cfg, Rng& rng) {
  if (cfg.m1 <= 0 || cfg.m2 <= 0)
    throw ContractViolation("build_training_set: m1 and m2 must be positive");
  if (est.dim() != sys.state_dim)
    throw ContractViolation("build_training_set: estimator dimension mismatch");
  const int n = sys.state_dim;
  const int m = sys.control_dim;
  CertTrainingSet ts;
  ts.m1 = cfg.m1;
  ts.m2 = cfg.m2;
  ts.state_dim = n;
  ts.control_dim = m;
  ts.queries.resize(cfg.m1, n);
  ts.centers.resize(cfg.m1, n);
  ts.inner.resize(static_cast<Eigen::Index>(cfg.m1) * cfg.m2, n);
  ts.drift.resize(static_cast<Eigen::Index>(cfg.m1) * cfg.m2, n);
  ts.control.resize(static_cast<Eigen::Index>(cfg.m1) * cfg.m2,
                    static_cast<Eigen::Index>(n) * m);
  ts.inside.assign(static_cast<std::size_t>(cfg.m1) * cfg.m2, 0);

  for (int i = 0; i < cfg.m1; ++i) {
    const Vec query = sys.state_bounds.sample(rng);
    const Ellipsoid ell = est.estimate(query);
    ts.queries.row(i) = query.transpose();
    ts.centers.row(i) = sys.state_bounds.clamp(ell.center).transpose();
    int clipped_here = 0;
    for (int j = 0; j < cfg.m2; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * cfg.m2 + j;
      Vec x = ell.sample_uniform(rng);
      const Vec clamped = sys.state_bounds.clamp(x);
      if ((clamped - x).cwiseAbs().maxCoeff() > 0.0) {
        ++clipped_here;
        ++ts.clipped_samples;
      }
      x = clamped;
      ts.inner.row(row) = x.transpose();
      ts.drift.row(row) = sys.drift(x).transpose();
      const Mat b = sys.control_matrix(x);
      if (b.rows() != n || b.cols() != m)
        throw ContractViolation("control matrix has wrong shape");
      for (int d = 0; d < n; ++d)
        for (int k = 0; k < m; ++k) ts.control(row, d * m + k) = b(d, k);
      ts.inside[static_cast<std::size_t>(row)] = in_safe_set(sys, x) ? 1 : 0;
    }
    if (clipped_here > kClipFlagFraction * cfg.m2) ++ts.flagged_entries;
  }
  return ts;
}

double cbf_residual(const MlpParams& barrier, const MlpParams& controller,
                    const Vec& query, const Vec& center, const Vec& x,
                    const SystemModel& sys, double alpha_slope) {
  if (query.size() != sys.state_dim || center.size() != sys.state_dim ||
      x.size() != sys.state_dim)
    throw ContractViolation("cbf_residual: state dimension mismatch");
  const Vec u = mlp_forward(controller, center);
  const Vec f = vector_field(sys, x, u);
  const Vec g = mlp_grad_input(barrier, x);
  const double h = mlp_forward(barrier, x)(0);
  return g.dot(f) + alpha_slope * h;
}

double set_loss_term(const MlpParams& barrier, const Vec& x, const SystemModel& sys) {
  const double h = mlp_forward(barrier, x)(0);
  return (in_safe_set(sys, x) ? -1.0 : 1.0) * h;
}

LossBreakdown evaluate_loss(const MlpParams& barrier, const MlpParams& controller,
                            const CertTrainingSet& set, const TrainConfig& cfg) {
  check_set(set);
  const int slab = std::max(1, 16384 / set.m2);
  BatchView bv;
  BatchWork w;
  double hinge_sum = 0.0;
  double set_sum = 0.0;
  long long violations = 0;
  std::vector<int> idx;
  for (int at = 0; at < set.m1; at += slab) {
    const int count = std::min(slab, set.m1 - at);
    idx.resize(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), at);
    gather(set, idx, bv);
    batch_residuals(barrier, controller, bv, set.m2, set.state_dim, set.control_dim,
                    cfg.alpha_slope, w);
    accumulate_loss(w, bv, hinge_sum, set_sum, violations);
  }
  const double denom = static_cast<double>(set.m1) * set.m2;
  return finish_loss(cfg, hinge_sum, set_sum, violations, denom);
}

LossBreakdown train_on_set(const CertTrainingSet& set, const TrainConfig& cfg,
                           MlpParams& barrier, MlpParams& controller, Rng& rng,
                           std::vector<EpochRow>& log) {
  check_set(set);
  if (barrier.in_dim != set.state_dim || controller.in_dim != set.state_dim)
    throw ContractViolation("train_on_set: network input dimension mismatch");
  if (controller.out_dim != set.control_dim)
    throw ContractViolation("train_on_set: controller output dimension mismatch");
  if (cfg.batch_size <= 0 || cfg.epochs <= 0 || cfg.learning_rate < 0.0)
    throw ContractViolation("train_on_set: invalid optimizer settings");

  std::vector<int> perm(static_cast<std::size_t>(set.m1));
  std::iota(perm.begin(), perm.end(), 0);
  BatchView bv;
  BatchWork w;
  MlpGrads gh, gpi;
  gh.resize_like(barrier);
  gpi.resize_like(controller);
  Mat du;
  LossBreakdown last;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(perm[i - 1], perm[j]);
    }
    int step = 0;
    for (int at = 0; at < set.m1; at += cfg.batch_size, ++step) {
      const int count = std::min(cfg.batch_size, set.m1 - at);
      std::vector<int> idx(perm.begin() + at, perm.begin() + at + count);
      gather(set, idx, bv);
      batch_residuals(barrier, controller, bv, set.m2, set.state_dim, set.control_dim,
                      cfg.alpha_slope, w);

      double hinge_sum = 0.0, set_sum = 0.0;
      long long violations = 0;
      accumulate_loss(w, bv, hinge_sum, set_sum, violations);
      const LossBreakdown batch_loss =
          finish_loss(cfg, hinge_sum, set_sum, violations,
                      static_cast<double>(count) * set.m2);
      if (!std::isfinite(batch_loss.total))
        throw TrainingDiverged("training loss is not finite",
                               batch_json(epoch, step, idx, batch_loss));

      const double denom = static_cast<double>(count) * set.m2;
      Vec cphi(w.r.size());
      Vec cy(w.r.size());
      for (Eigen::Index row = 0; row < w.r.size(); ++row) {
        const double active = w.r(row) < 0.0 ? 1.0 : 0.0;
        cphi(row) = -cfg.lambda1 * active / denom;
        cy(row) = cphi(row) * cfg.alpha_slope + cfg.lambda2 * bv.sign(row) / denom;
      }
      barrier_input_grads(barrier, w.bb);
      gh.set_zero();
      barrier_param_grads(barrier, bv.xs, w.f, cphi, cy, w.bb, gh);

      du.setZero(count, set.control_dim);
      for (Eigen::Index b = 0; b < count; ++b) {
        for (int j = 0; j < set.m2; ++j) {
          const Eigen::Index row = b * set.m2 + j;
          if (cphi(row) == 0.0) continue;
          for (int k = 0; k < set.control_dim; ++k) {
            double acc = 0.0;
            for (int d = 0; d < set.state_dim; ++d)
              acc += bv.bmat(row, d * set.control_dim + k) * w.bb.g(row, d);
            du(b, k) += cphi(row) * acc;
          }
        }
      }
      gpi.set_zero();
      controller_param_grads(controller, bv.centers, du, w.cb, gpi);

      mlp_apply_step(barrier, gh, cfg.learning_rate);
      mlp_apply_step(controller, gpi, cfg.learning_rate);
    }
    last = evaluate_loss(barrier, controller, set, cfg);
    if (!std::isfinite(last.total))
      throw TrainingDiverged("epoch loss is not finite",
                             batch_json(epoch, -1, {}, last));
    log.push_back(EpochRow{epoch, last});
  }
  return last;
}

LossBreakdown train(const SystemModel& sys, const SetEstimator& est, const TrainConfig& cfg,
                    MlpParams& barrier, MlpParams& controller, std::vector<EpochRow>& log) {
  Rng rng(cfg.seed);
  const CertTrainingSet set = build_training_set(sys, est, cfg, rng);
  return train_on_set(set, cfg, barrier, controller, rng, log);
}

std::vector<Vec> collect_hard_samples(const MlpParams& barrier, const MlpParams& controller,
                                      const CertTrainingSet& set, const TrainConfig& cfg,
                                      double threshold, double dedupe_radius, int max_keep,
                                      int* raw_count) {
  check_set(set);
  struct Candidate {
    int index;
    double violation;
  };
  std::vector<Candidate> cands;
  const int slab = std::max(1, 16384 / set.m2);
  BatchView bv;
  BatchWork w;
  std::vector<int> idx;
  for (int at = 0; at < set.m1; at += slab) {
    const int count = std::min(slab, set.m1 - at);
    idx.resize(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), at);
    gather(set, idx, bv);
    batch_residuals(barrier, controller, bv, set.m2, set.state_dim, set.control_dim,
                    cfg.alpha_slope, w);
    for (int b = 0; b < count; ++b) {
      double worst = 0.0;
      for (int j = 0; j < set.m2; ++j) {
        const double r = w.r(static_cast<Eigen::Index>(b) * set.m2 + j);
        if (-r > worst) worst = -r;
      }
      if (worst > threshold) cands.push_back(Candidate{at + b, worst});
    }
  }
  if (raw_count != nullptr) *raw_count = static_cast<int>(cands.size());

  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.violation != b.violation) return a.violation > b.violation;
    return a.index < b.index;
  });

  std::vector<Vec> kept;
  for (const Candidate& c : cands) {
    if (max_keep >= 0 && static_cast<int>(kept.size()) >= max_keep) break;
    const Vec q = set.queries.row(c.index).transpose();
    bool close = false;
    for (const Vec& k : kept) {
      if ((k - q).norm() <= dedupe_radius) {
        close = true;
        break;
      }
    }
    if (!close) kept.push_back(q);
  }
  return kept;
}

std::string train_log_csv(const std::vector<EpochRow>& log) {
  std::ostringstream out;
  out << "epoch,total,cbf_term,set_term,violation_count\n";
  for (const EpochRow& row : log) {
    out << row.epoch << ',' << dec_string(row.loss.total) << ','
        << dec_string(row.loss.cbf_term) << ',' << dec_string(row.loss.set_term) << ','
        << row.loss.violation_count << '\n';
  }
  return out.str();
}

}  // namespace pcbf
