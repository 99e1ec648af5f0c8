#include "gp.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "io.hpp"

namespace pcbf {

namespace {

using njson = nlohmann::ordered_json;

std::atomic<long> g_het_fits{0};

// Half of -E[log chi^2_1]; squared residuals from a single noise draw are
// chi^2_1-distributed, so raw log targets underestimate log sigma by this
// amount. gamma_euler/2 + ln(2)/2.
constexpr double kLogNoiseBias = 0.6351814227307391;

constexpr double kMinLength = 1e-3, kMaxLength = 1e3;
constexpr double kMinSignal = 1e-8, kMaxSignal = 1e8;
constexpr double kMinNoise = 1e-10, kMaxNoise = 1e6;
constexpr double kVarFloor = 1e-12;

Mat kernel_matrix(const Mat& x, const KernelParams& kp) {
  const int n = static_cast<int>(x.cols());
  Mat xs = x;
  for (int d = 0; d < n; ++d) xs.col(d) /= kp.lengthscales[d];
  const Vec sq = xs.rowwise().squaredNorm();
  Mat k = -2.0 * (xs * xs.transpose());
  k.colwise() += sq;
  k.rowwise() += sq.transpose();
  k = (k.cwiseMax(0.0) * -0.5).array().exp().matrix() * kp.signal_variance;
  return k;
}

Vec kernel_vector(const Mat& x, const KernelParams& kp, const Vec& q) {
  Mat diff = x.rowwise() - q.transpose();
  for (int d = 0; d < diff.cols(); ++d) diff.col(d) /= kp.lengthscales[d];
  return (diff.rowwise().squaredNorm() * -0.5).array().exp().matrix() *
         kp.signal_variance;
}

/// Cholesky with an escalating diagonal jitter, 1e-8 through 1e-4.
Eigen::LLT<Mat> chol_jitter(const Mat& m, double* jitter_used = nullptr) {
  double jitter = 1e-8;
  const int n = static_cast<int>(m.rows());
  for (int attempt = 0; attempt < 5; ++attempt) {
    Eigen::LLT<Mat> llt(m + jitter * Mat::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
    jitter *= 10.0;
  }
  throw FitFailure("covariance not positive definite after jitter escalation");
}

struct AscentState {
  KernelParams kp;
  double noise_var = 0.0;   // ignored when a fixed diagonal is supplied
  double lml = 0.0;
  Mat k;
  Eigen::LLT<Mat> llt;
  Vec alpha;
};

// Marginal likelihood at the state's parameters; false when the covariance
// cannot be factored even with jitter.
bool eval_ascent(const Mat& x, const Vec& y, const Vec* fixed_diag, AscentState& st) {
  const int n = static_cast<int>(x.rows());
  st.k = kernel_matrix(x, st.kp);
  Mat m = st.k;
  if (fixed_diag)
    m.diagonal() += *fixed_diag;
  else
    m.diagonal().array() += st.noise_var;
  try {
    st.llt = chol_jitter(m);
  } catch (const FitFailure&) {
    return false;
  }
  st.alpha = st.llt.solve(y);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(st.llt.matrixLLT()(i, i));
  st.lml = -0.5 * y.dot(st.alpha) - logdet -
           0.5 * n * 1.8378770664093454836;  // log(2*pi)
  return std::isfinite(st.lml);
}

Vec ascent_gradient(const Mat& x, const AscentState& st, bool fit_noise) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const Mat minv = st.llt.solve(Mat::Identity(n, n));
  const Mat a = st.alpha * st.alpha.transpose() - minv;
  Vec g(d + (fit_noise ? 2 : 1));
  g[0] = 0.5 * a.cwiseProduct(st.k).sum();  // d/d log signal_variance
  for (int j = 0; j < d; ++j) {
    const Vec col = x.col(j) / st.kp.lengthscales[j];
    Mat dist = col.replicate(1, n);
    dist -= dist.transpose().eval();
    g[1 + j] = 0.5 * a.cwiseProduct(st.k.cwiseProduct(dist.array().square().matrix())).sum();
  }
  if (fit_noise) g[d + 1] = 0.5 * st.noise_var * a.trace();
  return g;
}

void apply_log_params(const Vec& logp, bool fit_noise, AscentState& st) {
  const int d = static_cast<int>(st.kp.lengthscales.size());
  st.kp.signal_variance = std::exp(std::clamp(logp[0], std::log(kMinSignal), std::log(kMaxSignal)));
  for (int j = 0; j < d; ++j)
    st.kp.lengthscales[j] = std::exp(std::clamp(logp[1 + j], std::log(kMinLength), std::log(kMaxLength)));
  if (fit_noise)
    st.noise_var = std::exp(std::clamp(logp[d + 1], std::log(kMinNoise), std::log(kMaxNoise)));
}

Vec extract_log_params(const AscentState& st, bool fit_noise) {
  const int d = static_cast<int>(st.kp.lengthscales.size());
  Vec logp(d + (fit_noise ? 2 : 1));
  logp[0] = std::log(st.kp.signal_variance);
  for (int j = 0; j < d; ++j) logp[1 + j] = std::log(st.kp.lengthscales[j]);
  if (fit_noise) logp[d + 1] = std::log(st.noise_var);
  return logp;
}

/// Safeguarded fixed-step gradient ascent on log-parameters. A step that
/// would lower the marginal likelihood is retried at half length, so the
/// result never falls below the initial value.
void ascend(const Mat& x, const Vec& y, const Vec* fixed_diag, bool fit_noise,
            int iters, double step, AscentState& st) {
  if (!eval_ascent(x, y, fixed_diag, st))
    throw FitFailure("marginal likelihood undefined at initial parameters");
  int stalls = 0;
  for (int it = 0; it < iters; ++it) {
    Vec g = ascent_gradient(x, st, fit_noise);
    // Cap the per-parameter log step at 0.5 per iteration.
    g = g.cwiseMax(-50.0).cwiseMin(50.0);
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    const Vec logp = extract_log_params(st, fit_noise);
    double scale = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 8; ++attempt) {
      AscentState cand = st;
      apply_log_params(logp + (step * scale) * g, fit_noise, cand);
      if (eval_ascent(x, y, fixed_diag, cand) && cand.lml > st.lml) {
        const double gain = cand.lml - st.lml;
        st = std::move(cand);
        accepted = true;
        if (gain < 1e-10 * (1.0 + std::abs(st.lml))) ++stalls; else stalls = 0;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) ++stalls;
    if (stalls >= 4) break;
  }
}

KernelParams default_kernel_init(const Mat& x, const Vec& y) {
  KernelParams kp;
  const double var = y.size() > 1 ? (y.array() - y.mean()).square().sum() / (y.size() - 1) : 0.0;
  kp.signal_variance = std::max(var, 1e-6);
  kp.lengthscales.resize(x.cols());
  for (int d = 0; d < x.cols(); ++d) {
    const double range = x.col(d).maxCoeff() - x.col(d).minCoeff();
    kp.lengthscales[d] = std::max(0.5 * range, kMinLength);
  }
  return kp;
}

}  // namespace

double kernel_eval(const KernelParams& kp, const Vec& a, const Vec& b) {
  if (a.size() != b.size() || a.size() != kp.lengthscales.size())
    throw ContractViolation("kernel_eval: dimension mismatch");
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double r = (a[i] - b[i]) / kp.lengthscales[i];
    s += r * r;
  }
  return kp.signal_variance * std::exp(-0.5 * s);
}

PerceptionDataset::PerceptionDataset(int dim) : perceived_(0, dim), actual_(0, dim) {}

void PerceptionDataset::add(const Vec& perceived, const Vec& actual) {
  if (perceived_.cols() == 0 && perceived_.rows() == 0) {
    perceived_.resize(0, perceived.size());
    actual_.resize(0, perceived.size());
  }
  if (perceived.size() != perceived_.cols() || actual.size() != perceived_.cols())
    throw ContractViolation("PerceptionDataset::add: dimension mismatch");
  for (int i = 0; i < perceived_.rows(); ++i) {
    if ((perceived_.row(i).transpose() - perceived).lpNorm<Eigen::Infinity>() <= 1e-9) {
      // Duplicate measurement: average the true states.
      const int c = merge_counts_[static_cast<std::size_t>(i)];
      actual_.row(i) = (actual_.row(i) * c + actual.transpose()) / (c + 1);
      merge_counts_[static_cast<std::size_t>(i)] = c + 1;
      return;
    }
  }
  perceived_.conservativeResize(perceived_.rows() + 1, Eigen::NoChange);
  actual_.conservativeResize(actual_.rows() + 1, Eigen::NoChange);
  perceived_.row(perceived_.rows() - 1) = perceived.transpose();
  actual_.row(actual_.rows() - 1) = actual.transpose();
  merge_counts_.push_back(1);
}

std::string PerceptionDataset::to_csv() const {
  std::ostringstream out;
  const int n = dim();
  for (int i = 0; i < n; ++i) out << (i ? "," : "") << "xhat" << i;
  for (int i = 0; i < n; ++i) out << ",x" << i;
  out << "\n";
  for (int r = 0; r < size(); ++r) {
    for (int i = 0; i < n; ++i) out << (i ? "," : "") << dec_string(perceived_(r, i));
    for (int i = 0; i < n; ++i) out << "," << dec_string(actual_(r, i));
    out << "\n";
  }
  return out.str();
}

PerceptionDataset PerceptionDataset::from_csv(const std::string& content) {
  std::istringstream in(content);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw IoError("dataset CSV is empty");
  std::size_t first = 0;
  if (!rows[0].empty() && rows[0][0].rfind("xhat", 0) == 0) first = 1;
  if (rows.size() <= first) throw IoError("dataset CSV has no data rows");
  const std::size_t cols = rows[first].size();
  if (cols % 2 != 0 || cols == 0) throw IoError("dataset CSV must have 2n columns");
  const int n = static_cast<int>(cols / 2);
  PerceptionDataset ds(n);
  for (std::size_t r = first; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw IoError("dataset CSV has ragged rows");
    Vec xhat(n), x(n);
    for (int i = 0; i < n; ++i) {
      xhat[i] = parse_double(rows[r][static_cast<std::size_t>(i)]);
      x[i] = parse_double(rows[r][static_cast<std::size_t>(n + i)]);
    }
    ds.add(xhat, x);
  }
  return ds;
}

PerceptionDataset PerceptionDataset::permuted(const std::vector<int>& order) const {
  if (static_cast<int>(order.size()) != size())
    throw ContractViolation("permuted: order length mismatch");
  PerceptionDataset out(dim());
  out.perceived_.resize(size(), dim());
  out.actual_.resize(size(), dim());
  out.merge_counts_.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.perceived_.row(static_cast<int>(i)) = perceived_.row(order[i]);
    out.actual_.row(static_cast<int>(i)) = actual_.row(order[i]);
    out.merge_counts_[i] = merge_counts_[static_cast<std::size_t>(order[i])];
  }
  return out;
}

double log_marginal_likelihood(const Mat& inputs, const Vec& targets,
                               const KernelParams& kp, double noise_var) {
  AscentState st;
  st.kp = kp;
  st.noise_var = noise_var;
  if (!eval_ascent(inputs, targets, nullptr, st))
    throw FitFailure("marginal likelihood undefined");
  return st.lml;
}

void fit_homoscedastic(const Mat& inputs, const Vec& targets,
                       KernelParams& kp, double& noise_var,
                       int iters, double step) {
  if (inputs.rows() < 2) throw InsufficientData("fit_homoscedastic: need at least 2 samples");
  if (inputs.rows() != targets.size())
    throw ContractViolation("fit_homoscedastic: input/target count mismatch");
  AscentState st;
  st.kp = kp.lengthscales.size() == inputs.cols() ? kp : default_kernel_init(inputs, targets);
  st.kp.signal_variance = std::clamp(st.kp.signal_variance, kMinSignal, kMaxSignal);
  for (int d = 0; d < st.kp.lengthscales.size(); ++d)
    st.kp.lengthscales[d] = std::clamp(st.kp.lengthscales[d], kMinLength, kMaxLength);
  st.noise_var = std::clamp(noise_var > 0 ? noise_var : 1e-2, kMinNoise, kMaxNoise);
  ascend(inputs, targets, nullptr, true, iters, step, st);
  kp = st.kp;
  noise_var = st.noise_var;
}

HetGpModel::HetGpModel(Mat inputs, std::vector<GpDimSpec> dims)
    : inputs_(std::move(inputs)), specs_(std::move(dims)) {
  const int n = static_cast<int>(inputs_.rows());
  dims_.reserve(specs_.size());
  for (auto& spec : specs_) {
    if (spec.targets.size() != n || spec.log_noise_targets.size() != n)
      throw ContractViolation("HetGpModel: per-dimension array length mismatch");
    DimState st;
    Mat kz = kernel_matrix(inputs_, spec.noise_kernel);
    kz.diagonal().array() += spec.noise_gp_noise_var;
    st.noise_chol = chol_jitter(kz);
    const Vec centered = spec.log_noise_targets.array() - spec.log_noise_offset;
    st.noise_alpha = st.noise_chol.solve(centered);

    // Noise level at the training inputs feeds the heteroscedastic diagonal.
    const Mat kz_plain = kernel_matrix(inputs_, spec.noise_kernel);
    Vec zhat = (kz_plain * st.noise_alpha).array() + spec.log_noise_offset;
    zhat = zhat.cwiseMax(-100.0).cwiseMin(20.0);

    Mat k = kernel_matrix(inputs_, spec.mean_kernel);
    k.diagonal() += zhat.array().exp().square().matrix();
    st.chol = chol_jitter(k);
    st.alpha = st.chol.solve(spec.targets);
    dims_.push_back(std::move(st));
  }
}

void HetGpModel::predict(const Vec& xhat, Vec& mean, Vec& std_dev) const {
  if (xhat.size() != inputs_.cols())
    throw ContractViolation("predict: query dimension mismatch");
  const int nd = dim();
  mean.resize(nd);
  std_dev.resize(nd);
  for (int d = 0; d < nd; ++d) {
    const auto& spec = specs_[static_cast<std::size_t>(d)];
    const auto& st = dims_[static_cast<std::size_t>(d)];
    const Vec ks = kernel_vector(inputs_, spec.mean_kernel, xhat);
    mean[d] = ks.dot(st.alpha);
    const Vec kz = kernel_vector(inputs_, spec.noise_kernel, xhat);
    double zq = kz.dot(st.noise_alpha) + spec.log_noise_offset;
    zq = std::clamp(zq, -100.0, 20.0);
    const Vec w = st.chol.matrixL().solve(ks);
    double var = spec.mean_kernel.signal_variance + std::exp(zq) * std::exp(zq) -
                 w.squaredNorm();
    if (var < kVarFloor) {
      var = kVarFloor;
      ++clamp_count_;
    }
    std_dev[d] = std::sqrt(var);
  }
}

HetGpModel HetGpModel::fit(const PerceptionDataset& data, const GpFitConfig& cfg) {
  const int n = data.size();
  if (n < 5) throw InsufficientData("heteroscedastic fit: need at least 5 samples");
  const int nd = data.dim();
  const Mat& x = data.perceived();
  const Mat errors = data.errors();
  Rng root(cfg.seed);

  std::vector<GpDimSpec> specs;
  specs.reserve(static_cast<std::size_t>(nd));
  for (int d = 0; d < nd; ++d) {
    Rng rng = root.derive(static_cast<std::uint64_t>(d));
    const Vec y = errors.col(d);

    // Stage 1: homoscedastic fit.
    AscentState mean_st;
    mean_st.kp = default_kernel_init(x, y);
    mean_st.noise_var = std::clamp(0.1 * std::max(mean_st.kp.signal_variance, 1e-6), kMinNoise, kMaxNoise);
    ascend(x, y, nullptr, true, cfg.ascent_iters, cfg.step, mean_st);

    Vec fixed_diag = Vec::Constant(n, mean_st.noise_var);
    AscentState noise_st;
    Vec log_noise_targets;
    double offset = 0.0;
    bool have_noise_kernel = false;

    for (int round = 0; round < cfg.rounds; ++round) {
      // Stage 2: empirical per-point noise from posterior draws.
      if (!eval_ascent(x, y, &fixed_diag, mean_st))
        throw FitFailure("heteroscedastic fit: mean process evaluation failed");
      const Vec mu = mean_st.k * mean_st.alpha;
      const Mat minv_k = mean_st.llt.solve(mean_st.k);
      Mat sigma = mean_st.k - mean_st.k * minv_k;
      sigma = 0.5 * (sigma + sigma.transpose().eval());
      const Eigen::LLT<Mat> sig_chol = chol_jitter(sigma);
      Vec var_acc = Vec::Zero(n);
      Vec z(n);
      for (int t = 0; t < cfg.posterior_draws; ++t) {
        for (int i = 0; i < n; ++i) z[i] = rng.normal();
        const Vec draw = mu + sig_chol.matrixL() * z;
        var_acc += (y - draw).array().square().matrix();
      }
      var_acc /= cfg.posterior_draws;
      log_noise_targets =
          (var_acc.cwiseMax(kVarFloor).array().log() * 0.5 + kLogNoiseBias).matrix();

      // Stage 3: smooth the log-noise estimates with their own process.
      offset = log_noise_targets.mean();
      const Vec centered = log_noise_targets.array() - offset;
      if (!have_noise_kernel) {
        noise_st.kp = default_kernel_init(x, centered);
        noise_st.noise_var = std::clamp(std::max(0.5 * noise_st.kp.signal_variance, 1e-4),
                                        kMinNoise, kMaxNoise);
        have_noise_kernel = true;
      }
      ascend(x, centered, nullptr, true,
             round == 0 ? cfg.ascent_iters : cfg.refit_iters, cfg.step, noise_st);
      if (!eval_ascent(x, centered, nullptr, noise_st))
        throw FitFailure("heteroscedastic fit: noise process evaluation failed");
      Vec zhat = (noise_st.k * noise_st.alpha).array() + offset;
      zhat = zhat.cwiseMax(-100.0).cwiseMin(20.0);

      // Stage 4: refit the mean process against the predicted noise levels.
      fixed_diag = zhat.array().exp().square().matrix();
      ascend(x, y, &fixed_diag, false, cfg.refit_iters, cfg.step, mean_st);
    }

    GpDimSpec spec;
    spec.mean_kernel = mean_st.kp;
    spec.noise_kernel = noise_st.kp;
    spec.noise_gp_noise_var = noise_st.noise_var;
    spec.targets = y;
    spec.log_noise_targets = log_noise_targets;
    spec.log_noise_offset = offset;
    specs.push_back(std::move(spec));
  }
  ++g_het_fits;
  return HetGpModel(x, std::move(specs));
}

namespace {

njson kernel_to_json(const KernelParams& kp) {
  njson j;
  j["signal_variance"] = dec_string(kp.signal_variance);
  njson ls = njson::array();
  for (int i = 0; i < kp.lengthscales.size(); ++i) ls.push_back(dec_string(kp.lengthscales[i]));
  j["lengthscales"] = ls;
  return j;
}

KernelParams kernel_from_json(const njson& j) {
  KernelParams kp;
  kp.signal_variance = parse_double(j.at("signal_variance").get<std::string>());
  const auto& ls = j.at("lengthscales");
  kp.lengthscales.resize(static_cast<int>(ls.size()));
  for (std::size_t i = 0; i < ls.size(); ++i)
    kp.lengthscales[static_cast<int>(i)] = parse_double(ls[i].get<std::string>());
  return kp;
}

njson vec_to_json(const Vec& v) {
  njson a = njson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(dec_string(v[i]));
  return a;
}

Vec vec_from_json(const njson& a) {
  Vec v(static_cast<int>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<int>(i)] = parse_double(a[i].get<std::string>());
  return v;
}

}  // namespace

std::string HetGpModel::to_json() const {
  njson j;
  j["kind"] = "het_gp";
  j["input_dim"] = static_cast<int>(inputs_.cols());
  j["count"] = count();
  njson rows = njson::array();
  for (int r = 0; r < inputs_.rows(); ++r) rows.push_back(vec_to_json(inputs_.row(r)));
  j["inputs"] = rows;
  njson dims = njson::array();
  for (const auto& spec : specs_) {
    njson dj;
    dj["mean_kernel"] = kernel_to_json(spec.mean_kernel);
    dj["noise_kernel"] = kernel_to_json(spec.noise_kernel);
    dj["noise_gp_noise_var"] = dec_string(spec.noise_gp_noise_var);
    dj["log_noise_offset"] = dec_string(spec.log_noise_offset);
    dj["targets"] = vec_to_json(spec.targets);
    dj["log_noise_targets"] = vec_to_json(spec.log_noise_targets);
    dims.push_back(std::move(dj));
  }
  j["dims"] = dims;
  return j.dump(2) + "\n";
}

HetGpModel HetGpModel::from_json(const std::string& text) {
  njson j = njson::parse(text);
  if (j.value("kind", "") != "het_gp") throw IoError("not a GP checkpoint");
  const int nd = j.at("input_dim").get<int>();
  const auto& rows = j.at("inputs");
  Mat inputs(static_cast<int>(rows.size()), nd);
  for (std::size_t r = 0; r < rows.size(); ++r)
    inputs.row(static_cast<int>(r)) = vec_from_json(rows[r]).transpose();
  std::vector<GpDimSpec> specs;
  for (const auto& dj : j.at("dims")) {
    GpDimSpec spec;
    spec.mean_kernel = kernel_from_json(dj.at("mean_kernel"));
    spec.noise_kernel = kernel_from_json(dj.at("noise_kernel"));
    spec.noise_gp_noise_var = parse_double(dj.at("noise_gp_noise_var").get<std::string>());
    spec.log_noise_offset = parse_double(dj.at("log_noise_offset").get<std::string>());
    spec.targets = vec_from_json(dj.at("targets"));
    spec.log_noise_targets = vec_from_json(dj.at("log_noise_targets"));
    specs.push_back(std::move(spec));
  }
  return HetGpModel(std::move(inputs), std::move(specs));
}

long het_fit_count() { return g_het_fits.load(); }
void reset_het_fit_count() { g_het_fits.store(0); }

}  // namespace pcbf
