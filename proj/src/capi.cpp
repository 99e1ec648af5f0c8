#include "pcbf.h"

#include <cstring>
#include <memory>
#include <string>

#include "adaptive.hpp"
#include "commands.hpp"
#include "confidence.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "gp.hpp"
#include "io.hpp"
#include "mlp.hpp"

struct pcbf_system {
  pcbf::SystemModel model;
};

struct pcbf_dataset {
  pcbf::PerceptionDataset data;
};

struct pcbf_estimator {
  std::shared_ptr<const pcbf::SetEstimator> est;
  std::shared_ptr<const pcbf::HetGpModel> model;  // null for identity estimators
};

struct pcbf_mlp {
  pcbf::MlpParams params;
};

namespace {

thread_local std::string g_last_error;

void set_error(const char* what) { g_last_error = what != nullptr ? what : ""; }

template <typename F>
pcbf_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const pcbf::ConfigError& e) {
    set_error(e.what());
    return PCBF_ERR_INVALID;
  } catch (const pcbf::ContractViolation& e) {
    set_error(e.what());
    return PCBF_ERR_INVALID;
  } catch (const pcbf::InsufficientData& e) {
    set_error(e.what());
    return PCBF_ERR_INVALID;
  } catch (const pcbf::IoError& e) {
    set_error(e.what());
    return PCBF_ERR_IO;
  } catch (const pcbf::FitFailure& e) {
    set_error(e.what());
    return PCBF_ERR_FIT;
  } catch (const pcbf::TrainingDiverged& e) {
    set_error(e.what());
    return PCBF_ERR_DIVERGED;
  } catch (const pcbf::IntegrationBlowup& e) {
    set_error(e.what());
    return PCBF_ERR_NUMERIC;
  } catch (const std::exception& e) {
    set_error(e.what());
    return PCBF_ERR;
  } catch (...) {
    set_error("unknown error");
    return PCBF_ERR;
  }
}

pcbf_status invalid(const char* msg) {
  g_last_error = msg;
  return PCBF_ERR_INVALID;
}

// Estimator/GP settings shared with the orchestration schema; ignores
// unrelated sections so one config file can drive everything.
void parse_estimator_config(const char* config_json, pcbf::EstimatorConfig* ecfg,
                            pcbf::GpFitConfig* gcfg, std::uint64_t* seed) {
  if (config_json == nullptr || config_json[0] == '\0') return;
  const pcbf::RunSpec spec = pcbf::runspec_from_json(config_json);
  *ecfg = spec.adaptive.estimator;
  *gcfg = spec.adaptive.gp;
  *seed = spec.seed;
}

}  // namespace

extern "C" {

const char* pcbf_last_error(void) { return g_last_error.c_str(); }

const char* pcbf_version(void) { return "0.1.0"; }

pcbf_status pcbf_system_create(const char* name, pcbf_system** out) {
  if (name == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    *out = new pcbf_system{pcbf::system_by_name(name)};
    return PCBF_OK;
  });
}

void pcbf_system_free(pcbf_system* sys) { delete sys; }

pcbf_status pcbf_system_dims(const pcbf_system* sys, int* state_dim, int* control_dim) {
  if (sys == nullptr) return invalid("null system");
  if (state_dim != nullptr) *state_dim = sys->model.state_dim;
  if (control_dim != nullptr) *control_dim = sys->model.control_dim;
  g_last_error.clear();
  return PCBF_OK;
}

pcbf_status pcbf_system_step(const pcbf_system* sys, const double* x, const double* u,
                             double* x_next) {
  if (sys == nullptr || x == nullptr || u == nullptr || x_next == nullptr)
    return invalid("null argument");
  return guarded([&] {
    const int n = sys->model.state_dim;
    const int m = sys->model.control_dim;
    const pcbf::Vec xv = Eigen::Map<const pcbf::Vec>(x, n);
    const pcbf::Vec uv = Eigen::Map<const pcbf::Vec>(u, m);
    const pcbf::Vec next = pcbf::integrate_step(sys->model, xv, uv);
    std::memcpy(x_next, next.data(), sizeof(double) * static_cast<std::size_t>(n));
    return PCBF_OK;
  });
}

pcbf_status pcbf_system_perceive(const pcbf_system* sys, const double* x, double* xhat) {
  if (sys == nullptr || x == nullptr || xhat == nullptr) return invalid("null argument");
  return guarded([&] {
    const int n = sys->model.state_dim;
    const pcbf::Vec xv = Eigen::Map<const pcbf::Vec>(x, n);
    const pcbf::Vec ph = pcbf::perceive(sys->model, xv);
    std::memcpy(xhat, ph.data(), sizeof(double) * static_cast<std::size_t>(n));
    return PCBF_OK;
  });
}

int pcbf_system_in_safe_set(const pcbf_system* sys, const double* x) {
  if (sys == nullptr || x == nullptr) {
    invalid("null argument");
    return -1;
  }
  int result = -1;
  guarded([&] {
    const pcbf::Vec xv = Eigen::Map<const pcbf::Vec>(x, sys->model.state_dim);
    result = pcbf::in_safe_set(sys->model, xv) ? 1 : 0;
    return PCBF_OK;
  });
  return result;
}

pcbf_status pcbf_dataset_create(int dim, pcbf_dataset** out) {
  if (out == nullptr) return invalid("null argument");
  if (dim < 1) return invalid("dataset dimension must be positive");
  return guarded([&] {
    *out = new pcbf_dataset{pcbf::PerceptionDataset(dim)};
    return PCBF_OK;
  });
}

void pcbf_dataset_free(pcbf_dataset* data) { delete data; }

pcbf_status pcbf_dataset_add(pcbf_dataset* data, const double* perceived,
                             const double* actual) {
  if (data == nullptr || perceived == nullptr || actual == nullptr)
    return invalid("null argument");
  return guarded([&] {
    const int n = data->data.dim();
    data->data.add(Eigen::Map<const pcbf::Vec>(perceived, n),
                   Eigen::Map<const pcbf::Vec>(actual, n));
    return PCBF_OK;
  });
}

int pcbf_dataset_size(const pcbf_dataset* data) {
  if (data == nullptr) {
    invalid("null dataset");
    return -1;
  }
  return data->data.size();
}

pcbf_status pcbf_dataset_load_csv(const char* path, pcbf_dataset** out) {
  if (path == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    *out = new pcbf_dataset{pcbf::PerceptionDataset::from_csv(pcbf::read_file(path))};
    return PCBF_OK;
  });
}

pcbf_status pcbf_dataset_save_csv(const pcbf_dataset* data, const char* path) {
  if (data == nullptr || path == nullptr) return invalid("null argument");
  return guarded([&] {
    pcbf::atomic_write(path, data->data.to_csv());
    return PCBF_OK;
  });
}

pcbf_status pcbf_estimator_fit(const pcbf_dataset* data, const char* config_json,
                               pcbf_estimator** out) {
  if (data == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    pcbf::EstimatorConfig ecfg;
    pcbf::GpFitConfig gcfg;
    std::uint64_t seed = 0;
    parse_estimator_config(config_json, &ecfg, &gcfg, &seed);
    gcfg.seed = seed;
    auto model =
        std::make_shared<const pcbf::HetGpModel>(pcbf::HetGpModel::fit(data->data, gcfg));
    auto holder = std::make_unique<pcbf_estimator>();
    holder->model = model;
    holder->est = std::make_shared<const pcbf::GpSetEstimator>(model, ecfg);
    *out = holder.release();
    return PCBF_OK;
  });
}

pcbf_status pcbf_estimator_load(const char* path, const char* config_json,
                                pcbf_estimator** out) {
  if (path == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    pcbf::EstimatorConfig ecfg;
    pcbf::GpFitConfig gcfg;
    std::uint64_t seed = 0;
    parse_estimator_config(config_json, &ecfg, &gcfg, &seed);
    auto model = std::make_shared<const pcbf::HetGpModel>(
        pcbf::HetGpModel::from_json(pcbf::read_file(path)));
    auto holder = std::make_unique<pcbf_estimator>();
    holder->model = model;
    holder->est = std::make_shared<const pcbf::GpSetEstimator>(model, ecfg);
    *out = holder.release();
    return PCBF_OK;
  });
}

pcbf_status pcbf_estimator_save(const pcbf_estimator* est, const char* path) {
  if (est == nullptr || path == nullptr) return invalid("null argument");
  return guarded([&] {
    if (!est->model) throw pcbf::ContractViolation("identity estimators have no checkpoint");
    pcbf::atomic_write(path, est->model->to_json());
    return PCBF_OK;
  });
}

pcbf_status pcbf_estimator_identity(int dim, double min_semiaxis, pcbf_estimator** out) {
  if (out == nullptr) return invalid("null argument");
  return guarded([&] {
    if (dim <= 0) throw pcbf::ContractViolation("dimension must be positive");
    auto holder = std::make_unique<pcbf_estimator>();
    holder->est = std::make_shared<const pcbf::IdentitySetEstimator>(dim, min_semiaxis);
    *out = holder.release();
    return PCBF_OK;
  });
}

void pcbf_estimator_free(pcbf_estimator* est) { delete est; }

pcbf_status pcbf_estimator_estimate(const pcbf_estimator* est, const double* xhat,
                                    double* center, double* semiaxes) {
  if (est == nullptr || xhat == nullptr) return invalid("null argument");
  return guarded([&] {
    const int n = est->est->dim();
    const pcbf::Ellipsoid ell =
        est->est->estimate(Eigen::Map<const pcbf::Vec>(xhat, n));
    if (center != nullptr)
      std::memcpy(center, ell.center.data(), sizeof(double) * static_cast<std::size_t>(n));
    if (semiaxes != nullptr)
      std::memcpy(semiaxes, ell.semiaxes.data(),
                  sizeof(double) * static_cast<std::size_t>(n));
    return PCBF_OK;
  });
}

int pcbf_estimator_dim(const pcbf_estimator* est) {
  if (est == nullptr) {
    invalid("null estimator");
    return -1;
  }
  return est->est->dim();
}

pcbf_status pcbf_mlp_load(const char* path, pcbf_mlp** out) {
  if (path == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    *out = new pcbf_mlp{pcbf::mlp_from_json(pcbf::read_file(path))};
    return PCBF_OK;
  });
}

pcbf_status pcbf_mlp_save(const pcbf_mlp* net, const char* path) {
  if (net == nullptr || path == nullptr) return invalid("null argument");
  return guarded([&] {
    pcbf::atomic_write(path, pcbf::mlp_to_json(net->params));
    return PCBF_OK;
  });
}

void pcbf_mlp_free(pcbf_mlp* net) { delete net; }

pcbf_status pcbf_mlp_dims(const pcbf_mlp* net, int* in_dim, int* out_dim) {
  if (net == nullptr) return invalid("null network");
  if (in_dim != nullptr) *in_dim = net->params.in_dim;
  if (out_dim != nullptr) *out_dim = net->params.out_dim;
  g_last_error.clear();
  return PCBF_OK;
}

pcbf_status pcbf_mlp_forward(const pcbf_mlp* net, const double* x, int in_dim, double* out,
                             int out_dim) {
  if (net == nullptr || x == nullptr || out == nullptr) return invalid("null argument");
  return guarded([&] {
    if (in_dim != net->params.in_dim || out_dim != net->params.out_dim)
      throw pcbf::ContractViolation("pcbf_mlp_forward: dimension mismatch");
    const pcbf::Vec y =
        pcbf::mlp_forward(net->params, Eigen::Map<const pcbf::Vec>(x, in_dim));
    std::memcpy(out, y.data(), sizeof(double) * static_cast<std::size_t>(out_dim));
    return PCBF_OK;
  });
}

pcbf_status pcbf_synthesize(const char* config_json) {
  if (config_json == nullptr) return invalid("null config");
  return guarded([&] {
    const pcbf::RunSpec spec = pcbf::runspec_from_json(config_json);
    return pcbf::cmd_synthesize(spec) == 0 ? PCBF_OK : PCBF_SYNTH_HARD;
  });
}

pcbf_status pcbf_evaluate(const char* config_json, double* unsafe_ratio, char* line,
                          size_t line_cap) {
  if (config_json == nullptr) return invalid("null config");
  return guarded([&] {
    const pcbf::RunSpec spec = pcbf::runspec_from_json(config_json);
    std::string text;
    double ratio = 0.0;
    pcbf::cmd_evaluate(spec, &text, &ratio);
    if (unsafe_ratio != nullptr) *unsafe_ratio = ratio;
    if (line != nullptr && line_cap > 0) {
      const std::size_t n = std::min(line_cap - 1, text.size());
      std::memcpy(line, text.data(), n);
      line[n] = '\0';
    }
    return PCBF_OK;
  });
}

pcbf_status pcbf_sweep(const char* config_json) {
  if (config_json == nullptr) return invalid("null config");
  return guarded([&] {
    const pcbf::RunSpec spec = pcbf::runspec_from_json(config_json);
    pcbf::cmd_sweep(spec);
    return PCBF_OK;
  });
}

pcbf_status pcbf_density(const char* config_json) {
  if (config_json == nullptr) return invalid("null config");
  return guarded([&] {
    const pcbf::RunSpec spec = pcbf::runspec_from_json(config_json);
    pcbf::cmd_density(spec);
    return PCBF_OK;
  });
}

}  // extern "C"
