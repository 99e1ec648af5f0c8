#include "adaptive.hpp"

#include <algorithm>
#include <chrono>
#include <memory>

#include "errors.hpp"

namespace pcbf {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::adaptive: return "adaptive";
    case Strategy::uniform: return "uniform";
    case Strategy::nogp: return "nogp";
  }
  return "adaptive";
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "adaptive") return Strategy::adaptive;
  if (name == "uniform") return Strategy::uniform;
  if (name == "nogp") return Strategy::nogp;
  throw ConfigError("unknown strategy \"" + name + "\" (expected adaptive, uniform, or nogp)");
}

PerceptionDataset init_dataset(const SystemModel& sys, int n, Rng& rng) {
  PerceptionDataset data(sys.state_dim);
  for (int i = 0; i < n; ++i) {
    const Vec x = sys.state_bounds.sample(rng);
    data.add(perceive(sys, x), x);
  }
  return data;
}

void augment(PerceptionDataset& data, const std::vector<Vec>& hard,
             const SetEstimator& est, const SystemModel& sys) {
  for (const Vec& query : hard) {
    const Vec c = sys.state_bounds.clamp(est.estimate(query).center);
    data.add(perceive(sys, c), c);
  }
}

RunOutcome run_synthesis(const SystemModel& sys, const AdaptiveConfig& acfg,
                         const TrainConfig& tcfg, std::uint64_t seed) {
  if (acfg.max_iterations <= 0)
    throw ConfigError("max_iterations must be positive");
  if (acfg.initial_n <= 0 && acfg.strategy != Strategy::nogp)
    throw ConfigError("initial_n must be positive");
  if (acfg.hard_threshold < 0.0)
    throw ConfigError("hard_threshold must be nonnegative");

  const int n = sys.state_dim;
  const int m = sys.control_dim;
  const double dedupe = acfg.dedupe_radius > 0.0
                            ? acfg.dedupe_radius
                            : 0.05 * sys.state_bounds.diameter();

  Rng root(seed);
  RunOutcome out;
  out.data = PerceptionDataset(n);
  long long calls = 0;

  if (acfg.strategy != Strategy::nogp) {
    long long n0 = acfg.initial_n;
    if (acfg.sample_budget > 0) n0 = std::min<long long>(n0, acfg.sample_budget);
    Rng rng_init = root.derive(1);
    out.data = init_dataset(sys, static_cast<int>(n0), rng_init);
    calls = n0;
  }

  out.barrier = mlp_init(n, tcfg.hidden, 1, OutputHead::linear, Vec(), Vec(),
                         root.derive(2).next_u64());
  out.controller = mlp_init(n, tcfg.hidden, m, OutputHead::box_tanh,
                            sys.control_bounds.lo, sys.control_bounds.hi,
                            root.derive(3).next_u64());
  std::vector<Vec> hard;
  for (int iter = 0; iter < acfg.max_iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    std::unique_ptr<SetEstimator> est;
    bool fitted = false;
    if (acfg.strategy == Strategy::nogp) {
      est = std::make_unique<IdentitySetEstimator>(n, acfg.estimator.min_semiaxis);
    } else {
      GpFitConfig gcfg = acfg.gp;
      gcfg.seed = root.derive(100 + static_cast<std::uint64_t>(iter)).next_u64();
      out.model = std::make_shared<const HetGpModel>(HetGpModel::fit(out.data, gcfg));
      est = std::make_unique<GpSetEstimator>(out.model, acfg.estimator);
      fitted = true;
    }

    Rng rng_build = root.derive(200 + static_cast<std::uint64_t>(iter));
    const CertTrainingSet ts = build_training_set(sys, *est, tcfg, rng_build);

    std::vector<EpochRow> log;
    Rng rng_train = root.derive(300 + static_cast<std::uint64_t>(iter));
    const LossBreakdown loss = train_on_set(ts, tcfg, out.barrier, out.controller,
                                            rng_train, log);

    int raw = 0;
    hard = collect_hard_samples(out.barrier, out.controller, ts, tcfg,
                                acfg.hard_threshold, dedupe, acfg.max_new_per_iter, &raw);

    IterationReport rep;
    rep.index = iter;
    rep.dataset_size = calls;
    rep.dataset_rows = acfg.strategy == Strategy::nogp ? 0 : out.data.size();
    rep.gp_fitted = fitted;
    rep.loss = loss;
    rep.hard_raw = raw;
    rep.hard_kept = static_cast<int>(hard.size());
    rep.flagged_entries = ts.flagged_entries;
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.reports.push_back(rep);
    out.dataset_csvs.push_back(out.data.to_csv());
    out.train_log_csvs.push_back(train_log_csv(log));
    out.barrier_jsons.push_back(mlp_to_json(out.barrier));
    out.controller_jsons.push_back(mlp_to_json(out.controller));

    if (hard.empty()) break;
    if (iter + 1 == acfg.max_iterations) break;

    if (acfg.strategy == Strategy::adaptive) {
      std::vector<Vec> take = hard;
      if (acfg.sample_budget > 0) {
        const long long room = std::max<long long>(0, acfg.sample_budget - calls);
        if (static_cast<long long>(take.size()) > room)
          take.resize(static_cast<std::size_t>(room));
      }
      augment(out.data, take, *est, sys);
      calls += static_cast<long long>(take.size());
    } else if (acfg.strategy == Strategy::uniform) {
      long long want = static_cast<long long>(hard.size());
      if (acfg.sample_budget > 0)
        want = std::min(want, std::max<long long>(0, acfg.sample_budget - calls));
      Rng rng_aug = root.derive(400 + static_cast<std::uint64_t>(iter));
      for (long long i = 0; i < want; ++i) {
        const Vec x = sys.state_bounds.sample(rng_aug);
        out.data.add(perceive(sys, x), x);
      }
      calls += want;
    }
  }

  out.success = hard.empty();
  out.hard_remaining = std::move(hard);
  return out;
}

}  // namespace pcbf
