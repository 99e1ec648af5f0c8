#include "commands.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"

namespace pcbf {

namespace {

using nlohmann::ordered_json;

std::string join(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  if (dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

double as_double(const ordered_json& v, const std::string& name) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_double(v.get<std::string>());
  throw ConfigError("config field \"" + name + "\" must be a number");
}

long long as_int(const ordered_json& v, const std::string& name) {
  if (v.is_number_integer()) return v.get<long long>();
  throw ConfigError("config field \"" + name + "\" must be an integer");
}

std::uint64_t as_u64(const ordered_json& v, const std::string& name) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const long long s = v.get<long long>();
    if (s >= 0) return static_cast<std::uint64_t>(s);
  }
  throw ConfigError("config field \"" + name + "\" must be a nonnegative integer");
}

void check_keys(const ordered_json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (allowed.find(it.key()) == allowed.end())
      throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
  }
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

RunSpec runspec_from_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(doc,
             {"benchmark", "strategy", "seed", "out", "jobs", "estimator", "gp", "train",
              "adaptive", "eval", "audit", "sweep", "evaluate", "density"},
             "the top level");

  RunSpec spec;
  if (doc.contains("benchmark")) spec.benchmark = doc["benchmark"].get<std::string>();
  if (doc.contains("strategy"))
    spec.strategy = strategy_from_name(doc["strategy"].get<std::string>());
  if (doc.contains("seed")) spec.seed = as_u64(doc["seed"], "seed");
  if (doc.contains("out")) spec.out_dir = doc["out"].get<std::string>();
  if (doc.contains("jobs")) {
    spec.jobs = static_cast<int>(as_int(doc["jobs"], "jobs"));
    if (spec.jobs <= 0) throw ConfigError("jobs must be positive");
  }

  if (doc.contains("estimator")) {
    const auto& e = doc["estimator"];
    check_keys(e, {"delta", "min_semiaxis"}, "estimator");
    if (e.contains("delta")) spec.adaptive.estimator.delta = as_double(e["delta"], "delta");
    if (e.contains("min_semiaxis"))
      spec.adaptive.estimator.min_semiaxis = as_double(e["min_semiaxis"], "min_semiaxis");
    if (spec.adaptive.estimator.delta <= 0.0 || spec.adaptive.estimator.delta >= 1.0)
      throw ConfigError("estimator delta must lie strictly between 0 and 1");
  }

  if (doc.contains("gp")) {
    const auto& g = doc["gp"];
    check_keys(g, {"ascent_iters", "refit_iters", "step", "rounds", "posterior_draws"}, "gp");
    GpFitConfig& c = spec.adaptive.gp;
    if (g.contains("ascent_iters"))
      c.ascent_iters = static_cast<int>(as_int(g["ascent_iters"], "ascent_iters"));
    if (g.contains("refit_iters"))
      c.refit_iters = static_cast<int>(as_int(g["refit_iters"], "refit_iters"));
    if (g.contains("step")) c.step = as_double(g["step"], "step");
    if (g.contains("rounds")) c.rounds = static_cast<int>(as_int(g["rounds"], "rounds"));
    if (g.contains("posterior_draws"))
      c.posterior_draws = static_cast<int>(as_int(g["posterior_draws"], "posterior_draws"));
  }

  if (doc.contains("train")) {
    const auto& t = doc["train"];
    check_keys(t,
               {"m1", "m2", "lambda1", "lambda2", "alpha_slope", "epochs", "learning_rate",
                "batch_size", "hidden"},
               "train");
    TrainConfig& c = spec.train;
    if (t.contains("m1")) c.m1 = static_cast<int>(as_int(t["m1"], "m1"));
    if (t.contains("m2")) c.m2 = static_cast<int>(as_int(t["m2"], "m2"));
    if (t.contains("lambda1")) c.lambda1 = as_double(t["lambda1"], "lambda1");
    if (t.contains("lambda2")) c.lambda2 = as_double(t["lambda2"], "lambda2");
    if (t.contains("alpha_slope")) c.alpha_slope = as_double(t["alpha_slope"], "alpha_slope");
    if (t.contains("epochs")) c.epochs = static_cast<int>(as_int(t["epochs"], "epochs"));
    if (t.contains("learning_rate"))
      c.learning_rate = as_double(t["learning_rate"], "learning_rate");
    if (t.contains("batch_size"))
      c.batch_size = static_cast<int>(as_int(t["batch_size"], "batch_size"));
    if (t.contains("hidden")) c.hidden = static_cast<int>(as_int(t["hidden"], "hidden"));
  }

  if (doc.contains("adaptive")) {
    const auto& a = doc["adaptive"];
    check_keys(a,
               {"max_iterations", "initial_n", "hard_threshold", "dedupe_radius",
                "max_new_per_iter", "sample_budget"},
               "adaptive");
    AdaptiveConfig& c = spec.adaptive;
    if (a.contains("max_iterations"))
      c.max_iterations = static_cast<int>(as_int(a["max_iterations"], "max_iterations"));
    if (a.contains("initial_n"))
      c.initial_n = static_cast<int>(as_int(a["initial_n"], "initial_n"));
    if (a.contains("hard_threshold"))
      c.hard_threshold = as_double(a["hard_threshold"], "hard_threshold");
    if (a.contains("dedupe_radius"))
      c.dedupe_radius = as_double(a["dedupe_radius"], "dedupe_radius");
    if (a.contains("max_new_per_iter"))
      c.max_new_per_iter = static_cast<int>(as_int(a["max_new_per_iter"], "max_new_per_iter"));
    if (a.contains("sample_budget"))
      c.sample_budget = as_int(a["sample_budget"], "sample_budget");
  }

  if (doc.contains("eval")) {
    const auto& e = doc["eval"];
    check_keys(e, {"episodes", "horizon_s", "critical_exit_s", "max_draws"}, "eval");
    EvalConfig& c = spec.eval;
    if (e.contains("episodes")) c.episodes = static_cast<int>(as_int(e["episodes"], "episodes"));
    if (e.contains("horizon_s")) c.horizon_s = as_double(e["horizon_s"], "horizon_s");
    if (e.contains("critical_exit_s"))
      c.critical_exit_s = as_double(e["critical_exit_s"], "critical_exit_s");
    if (e.contains("max_draws")) c.max_draws = as_int(e["max_draws"], "max_draws");
  }

  if (doc.contains("audit")) {
    const auto& a = doc["audit"];
    check_keys(a, {"queries", "inner"}, "audit");
    if (a.contains("queries"))
      spec.audit_queries = static_cast<int>(as_int(a["queries"], "queries"));
    if (a.contains("inner")) spec.audit_inner = static_cast<int>(as_int(a["inner"], "inner"));
  }

  if (doc.contains("sweep")) {
    const auto& s = doc["sweep"];
    check_keys(s, {"budgets", "seeds"}, "sweep");
    if (s.contains("budgets")) {
      if (!s["budgets"].is_array()) throw ConfigError("sweep budgets must be an array");
      for (const auto& b : s["budgets"]) spec.sweep_budgets.push_back(as_int(b, "budgets"));
    }
    if (s.contains("seeds")) {
      if (!s["seeds"].is_array()) throw ConfigError("sweep seeds must be an array");
      for (const auto& b : s["seeds"]) spec.sweep_seeds.push_back(as_u64(b, "seeds"));
    }
  }

  if (doc.contains("evaluate")) {
    const auto& e = doc["evaluate"];
    check_keys(e, {"run", "policy"}, "evaluate");
    if (e.contains("run")) spec.run_dir = e["run"].get<std::string>();
    if (e.contains("policy")) spec.policy = e["policy"].get<std::string>();
  }

  if (doc.contains("density")) {
    const auto& d = doc["density"];
    check_keys(d, {"bins", "dims", "datasets"}, "density");
    if (d.contains("bins")) spec.density_bins = static_cast<int>(as_int(d["bins"], "bins"));
    if (d.contains("dims")) {
      if (!d["dims"].is_array() || d["dims"].size() != 2)
        throw ConfigError("density dims must be an array of two dimension indices");
      spec.density_dim_i = static_cast<int>(as_int(d["dims"][0], "dims"));
      spec.density_dim_j = static_cast<int>(as_int(d["dims"][1], "dims"));
    }
    if (d.contains("datasets")) {
      if (!d["datasets"].is_array()) throw ConfigError("density datasets must be an array");
      for (const auto& p : d["datasets"])
        spec.density_datasets.push_back(p.get<std::string>());
    }
  }

  return spec;
}

std::string runspec_config_json(const RunSpec& spec) {
  ordered_json doc;
  doc["benchmark"] = spec.benchmark;
  doc["strategy"] = strategy_name(spec.strategy);
  doc["seed"] = spec.seed;
  ordered_json est;
  est["delta"] = dec_string(spec.adaptive.estimator.delta);
  est["min_semiaxis"] = dec_string(spec.adaptive.estimator.min_semiaxis);
  doc["estimator"] = est;
  ordered_json gp;
  gp["ascent_iters"] = spec.adaptive.gp.ascent_iters;
  gp["refit_iters"] = spec.adaptive.gp.refit_iters;
  gp["step"] = dec_string(spec.adaptive.gp.step);
  gp["rounds"] = spec.adaptive.gp.rounds;
  gp["posterior_draws"] = spec.adaptive.gp.posterior_draws;
  doc["gp"] = gp;
  ordered_json train;
  train["m1"] = spec.train.m1;
  train["m2"] = spec.train.m2;
  train["lambda1"] = dec_string(spec.train.lambda1);
  train["lambda2"] = dec_string(spec.train.lambda2);
  train["alpha_slope"] = dec_string(spec.train.alpha_slope);
  train["epochs"] = spec.train.epochs;
  train["learning_rate"] = dec_string(spec.train.learning_rate);
  train["batch_size"] = spec.train.batch_size;
  train["hidden"] = spec.train.hidden;
  doc["train"] = train;
  ordered_json ad;
  ad["max_iterations"] = spec.adaptive.max_iterations;
  ad["initial_n"] = spec.adaptive.initial_n;
  ad["hard_threshold"] = dec_string(spec.adaptive.hard_threshold);
  ad["dedupe_radius"] = dec_string(spec.adaptive.dedupe_radius);
  ad["max_new_per_iter"] = spec.adaptive.max_new_per_iter;
  ad["sample_budget"] = spec.adaptive.sample_budget;
  doc["adaptive"] = ad;
  ordered_json ev;
  ev["episodes"] = spec.eval.episodes;
  ev["horizon_s"] = dec_string(spec.eval.horizon_s);
  ev["critical_exit_s"] = dec_string(spec.eval.critical_exit_s);
  ev["max_draws"] = spec.eval.max_draws;
  doc["eval"] = ev;
  ordered_json audit;
  audit["queries"] = spec.audit_queries;
  audit["inner"] = spec.audit_inner;
  doc["audit"] = audit;
  return doc.dump(2);
}

int cmd_synthesize(const RunSpec& spec) {
  if (spec.out_dir.empty()) throw ConfigError("synthesize requires an output directory");
  const SystemModel sys = system_by_name(spec.benchmark);
  AdaptiveConfig acfg = spec.adaptive;
  acfg.strategy = spec.strategy;
  TrainConfig tcfg = spec.train;
  tcfg.seed = spec.seed;

  const RunOutcome out = run_synthesis(sys, acfg, tcfg, spec.seed);

  ensure_dir(spec.out_dir);
  atomic_write(join(spec.out_dir, "controller.json"), mlp_to_json(out.controller));
  atomic_write(join(spec.out_dir, "barrier.json"), mlp_to_json(out.barrier));
  if (out.model) atomic_write(join(spec.out_dir, "estimator.json"), out.model->to_json());
  for (std::size_t k = 0; k < out.dataset_csvs.size(); ++k) {
    const std::string d = join(spec.out_dir, "iter_" + std::to_string(k));
    atomic_write(join(d, "dataset.csv"), out.dataset_csvs[k]);
    atomic_write(join(d, "train_log.csv"), out.train_log_csvs[k]);
    atomic_write(join(d, "barrier.json"), out.barrier_jsons[k]);
    atomic_write(join(d, "controller.json"), out.controller_jsons[k]);
  }

  ordered_json man;
  man["command"] = "synthesize";
  man["benchmark"] = spec.benchmark;
  man["strategy"] = strategy_name(spec.strategy);
  man["seed"] = spec.seed;
  man["config"] = ordered_json::parse(runspec_config_json(spec));
  ordered_json iters = ordered_json::array();
  for (const IterationReport& r : out.reports) {
    ordered_json it;
    it["index"] = r.index;
    it["dataset_size"] = r.dataset_size;
    it["dataset_rows"] = r.dataset_rows;
    it["gp_fitted"] = r.gp_fitted;
    ordered_json loss;
    loss["total"] = dec_string(r.loss.total);
    loss["cbf_term"] = dec_string(r.loss.cbf_term);
    loss["set_term"] = dec_string(r.loss.set_term);
    loss["violation_count"] = r.loss.violation_count;
    it["loss"] = loss;
    it["hard_raw"] = r.hard_raw;
    it["hard_kept"] = r.hard_kept;
    it["flagged_entries"] = r.flagged_entries;
    iters.push_back(it);
  }
  man["iterations"] = iters;
  man["outcome"] = out.success ? "success" : "failure";
  man["hard_remaining"] = static_cast<int>(out.hard_remaining.size());
  atomic_write(join(spec.out_dir, "manifest.json"), man.dump(2) + "\n");

  if (!out.success) {
    ordered_json hard;
    hard["count"] = static_cast<int>(out.hard_remaining.size());
    ordered_json rows = ordered_json::array();
    for (const Vec& q : out.hard_remaining) {
      ordered_json row = ordered_json::array();
      for (Eigen::Index i = 0; i < q.size(); ++i) row.push_back(dec_string(q(i)));
      rows.push_back(row);
    }
    hard["queries"] = rows;
    atomic_write(join(spec.out_dir, "hard_samples.json"), hard.dump(2) + "\n");
  }

  for (const IterationReport& r : out.reports) {
    std::fprintf(stderr,
                 "[synthesize %s/%s seed=%" PRIu64
                 "] iter %d: samples=%lld loss=%.6f hard=%d/%d (%.1fs)\n",
                 spec.benchmark.c_str(), strategy_name(spec.strategy), spec.seed, r.index,
                 r.dataset_size, r.loss.total, r.hard_kept, r.hard_raw, r.wall_seconds);
  }
  return out.success ? 0 : 2;
}

int cmd_evaluate(const RunSpec& spec, std::string* stdout_line, double* unsafe_out) {
  const SystemModel sys = system_by_name(spec.benchmark);
  EvalConfig ecfg = spec.eval;
  ecfg.seed = spec.seed;
  const std::string outd = !spec.out_dir.empty()
                               ? spec.out_dir
                               : (!spec.run_dir.empty() ? spec.run_dir : std::string("."));

  PerceivedPolicy policy;
  MlpParams barrier, controller;
  bool have_barrier = false;
  bool ecm = false;
  std::shared_ptr<const SetEstimator> est;

  if (spec.policy == "zero") {
    policy = zero_policy(sys);
  } else if (spec.policy == "ecm") {
    if (spec.run_dir.empty())
      throw ConfigError("evaluate: a run directory is required for the ecm policy");
    controller = mlp_from_json(read_file(join(spec.run_dir, "controller.json")));
    if (controller.in_dim != sys.state_dim || controller.out_dim != sys.control_dim)
      throw ConfigError("controller checkpoint does not match the benchmark dimensions");
    const std::string bpath = join(spec.run_dir, "barrier.json");
    if (file_exists(bpath)) {
      barrier = mlp_from_json(read_file(bpath));
      have_barrier = true;
    }
    const std::string epath = join(spec.run_dir, "estimator.json");
    if (file_exists(epath)) {
      auto model = std::make_shared<const HetGpModel>(HetGpModel::from_json(read_file(epath)));
      if (model->dim() != sys.state_dim)
        throw ConfigError("estimator checkpoint does not match the benchmark dimensions");
      est = std::make_shared<const GpSetEstimator>(model, spec.adaptive.estimator);
    } else {
      est = std::make_shared<const IdentitySetEstimator>(sys.state_dim,
                                                         spec.adaptive.estimator.min_semiaxis);
    }
    ecm = true;
    const Box bounds = sys.state_bounds;
    const MlpParams ctrl = controller;
    const std::shared_ptr<const SetEstimator> e = est;
    policy = [ctrl, bounds, e](const Vec& xhat) {
      return mlp_forward(ctrl, bounds.clamp(e->estimate(xhat).center));
    };
  } else {
    throw ConfigError("unknown policy \"" + spec.policy + "\" (expected ecm or zero)");
  }

  const EvalReport rep =
      evaluate_policy(sys, policy, have_barrier ? &barrier : nullptr, ecfg);

  AuditReport audit;
  bool have_audit = false;
  if (ecm && have_barrier && spec.audit_queries > 0 && spec.audit_inner > 0) {
    const std::uint64_t audit_seed = Rng(spec.seed).derive(5000).root_seed();
    audit = audit_cbf(sys, barrier, controller, *est, spec.audit_queries, spec.audit_inner,
                      spec.train.alpha_slope, audit_seed);
    have_audit = true;
  }

  ordered_json doc;
  doc["command"] = "evaluate";
  doc["benchmark"] = spec.benchmark;
  doc["policy"] = spec.policy;
  doc["seed"] = spec.seed;
  doc["episodes"] = rep.episodes;
  doc["unsafe_ratio"] = dec_string(rep.unsafe_ratio);
  doc["critical_draws"] = rep.critical_draws;
  if (std::isnan(rep.mean_min_barrier_safe))
    doc["mean_min_barrier_safe"] = nullptr;
  else
    doc["mean_min_barrier_safe"] = dec_string(rep.mean_min_barrier_safe);
  int counts[4] = {0, 0, 0, 0};
  for (const EpisodeResult& r : rep.results) counts[static_cast<int>(r.outcome)] += 1;
  ordered_json oc;
  oc["safe"] = counts[0];
  oc["exited_safe_set"] = counts[1];
  oc["exited_state_space"] = counts[2];
  oc["blowup"] = counts[3];
  doc["outcome_counts"] = oc;
  if (have_audit) {
    ordered_json a;
    a["checked"] = audit.checked;
    a["violations"] = audit.violations;
    a["violation_rate"] = dec_string(audit.violation_rate);
    a["worst_residual"] = dec_string(audit.worst_residual);
    doc["audit"] = a;
  } else {
    doc["audit"] = nullptr;
  }
  ordered_json eps = ordered_json::array();
  for (const EpisodeResult& r : rep.results) {
    ordered_json e;
    e["outcome"] = outcome_name(r.outcome);
    e["steps"] = r.steps;
    if (have_barrier && !std::isnan(r.min_barrier))
      e["min_barrier"] = dec_string(r.min_barrier);
    eps.push_back(e);
  }
  doc["episode_results"] = eps;
  atomic_write(join(outd, "eval_report.json"), doc.dump(2) + "\n");

  if (stdout_line != nullptr) *stdout_line = "unsafe_ratio=" + fmt3(rep.unsafe_ratio);
  if (unsafe_out != nullptr) *unsafe_out = rep.unsafe_ratio;
  return 0;
}

int cmd_sweep(const RunSpec& spec) {
  if (spec.out_dir.empty()) throw ConfigError("sweep requires an output directory");
  if (spec.sweep_budgets.empty()) throw ConfigError("sweep requires at least one budget");
  for (long long b : spec.sweep_budgets)
    if (b < 2) throw ConfigError("sweep budgets must be at least 2");
  (void)system_by_name(spec.benchmark);  // validate the name before spawning work
  const std::vector<std::uint64_t> seeds =
      spec.sweep_seeds.empty() ? std::vector<std::uint64_t>{spec.seed} : spec.sweep_seeds;

  struct Cell {
    Strategy strategy;
    long long budget;  // 0 for nogp
    std::uint64_t seed;
    std::string dir;
  };
  std::vector<Cell> cells;
  for (Strategy s : {Strategy::adaptive, Strategy::uniform}) {
    for (long long b : spec.sweep_budgets) {
      for (std::uint64_t sd : seeds) {
        cells.push_back(Cell{s, b, sd,
                             join(spec.out_dir, std::string(strategy_name(s)) + "_b" +
                                                    std::to_string(b) + "_s" +
                                                    std::to_string(sd))});
      }
    }
  }
  for (std::uint64_t sd : seeds) {
    cells.push_back(
        Cell{Strategy::nogp, 0, sd, join(spec.out_dir, "nogp_s" + std::to_string(sd))});
  }

  std::vector<std::string> ratios(cells.size(), "NA");
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& c = cells[i];
      try {
        RunSpec sub = spec;
        sub.strategy = c.strategy;
        sub.seed = c.seed;
        sub.out_dir = c.dir;
        sub.adaptive.sample_budget = c.strategy == Strategy::nogp ? -1 : c.budget;
        cmd_synthesize(sub);  // evaluate the result whether or not hard samples remain
        RunSpec esub = sub;
        esub.run_dir = c.dir;
        esub.policy = "ecm";
        double ratio = 0.0;
        std::string line;
        cmd_evaluate(esub, &line, &ratio);
        ratios[i] = fmt3(ratio);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "sweep cell %s failed: %s\n", c.dir.c_str(), e.what());
      }
    }
  };
  const int jobs = std::max(1, spec.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::ostringstream csv;
  csv << "benchmark,strategy,n_samples,unsafe_ratio,seed\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    csv << spec.benchmark << ',' << strategy_name(cells[i].strategy) << ','
        << cells[i].budget << ',' << ratios[i] << ',' << cells[i].seed << '\n';
  }
  atomic_write(join(spec.out_dir, "sweep.csv"), csv.str());
  return 0;
}

int cmd_density(const RunSpec& spec) {
  if (spec.out_dir.empty()) throw ConfigError("density requires an output directory");
  if (spec.density_datasets.empty())
    throw ConfigError("density requires at least one dataset CSV");
  const SystemModel sys = system_by_name(spec.benchmark);
  std::set<std::string> used;
  for (const std::string& path : spec.density_datasets) {
    const PerceptionDataset data = PerceptionDataset::from_csv(read_file(path));
    if (data.dim() != sys.state_dim)
      throw ConfigError("dataset \"" + path + "\" does not match the benchmark dimensions");
    const DensityGrid grid =
        density_histogram(data, spec.density_dim_i, spec.density_dim_j, spec.density_bins,
                          sys.state_bounds);
    std::string stem = std::filesystem::path(path).stem().string();
    if (stem.empty()) stem = "dataset";
    std::string name = "density_" + stem + ".csv";
    for (int k = 2; used.count(name) > 0; ++k)
      name = "density_" + stem + "_" + std::to_string(k) + ".csv";
    used.insert(name);
    atomic_write(join(spec.out_dir, name), grid.to_csv());
  }
  return 0;
}

}  // namespace pcbf
