#ifndef PCBF_H
#define PCBF_H

/* C interface for perception-aware barrier-certificate synthesis.
 *
 * All functions return a pcbf_status; detail for the latest failure on the
 * calling thread is available from pcbf_last_error(). Objects returned
 * through out-parameters are owned by the caller and released with the
 * matching *_free function.
 *
 * The orchestration entry points (pcbf_synthesize, pcbf_evaluate,
 * pcbf_sweep, pcbf_density) take one merged JSON configuration object; the
 * bundled CLI builds that object from its flags, so the CLI and the library
 * accept the same schema.
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef PCBF_API
#define PCBF_API __attribute__((visibility("default")))
#endif

typedef enum pcbf_status {
  PCBF_OK = 0,
  PCBF_ERR = 1,           /* unclassified failure */
  PCBF_SYNTH_HARD = 2,    /* synthesis finished with hard measurements left */
  PCBF_ERR_INVALID = 3,   /* bad arguments or configuration */
  PCBF_ERR_IO = 4,        /* file read/write failure */
  PCBF_ERR_FIT = 5,       /* model fitting failed */
  PCBF_ERR_DIVERGED = 6,  /* training produced a non-finite loss */
  PCBF_ERR_NUMERIC = 7    /* numerical blowup during integration */
} pcbf_status;

typedef struct pcbf_system pcbf_system;
typedef struct pcbf_dataset pcbf_dataset;
typedef struct pcbf_estimator pcbf_estimator;
typedef struct pcbf_mlp pcbf_mlp;

/* Message for the most recent failure on this thread ("" if none). The
 * pointer stays valid until the next library call on the same thread. */
PCBF_API const char* pcbf_last_error(void);

PCBF_API const char* pcbf_version(void);

/* ---- Benchmark systems ---- */

/* name: "dubins", "cartpole", or "lanekeep". */
PCBF_API pcbf_status pcbf_system_create(const char* name, pcbf_system** out);
PCBF_API void pcbf_system_free(pcbf_system* sys);
PCBF_API pcbf_status pcbf_system_dims(const pcbf_system* sys, int* state_dim,
                                      int* control_dim);
/* One closed-loop integration step (RK4 with zero-order hold). */
PCBF_API pcbf_status pcbf_system_step(const pcbf_system* sys, const double* x,
                                      const double* u, double* x_next);
PCBF_API pcbf_status pcbf_system_perceive(const pcbf_system* sys, const double* x,
                                          double* xhat);
/* 1 if x lies in the safe set, 0 if not, -1 on error. */
PCBF_API int pcbf_system_in_safe_set(const pcbf_system* sys, const double* x);

/* ---- Perception datasets ---- */

PCBF_API pcbf_status pcbf_dataset_create(int dim, pcbf_dataset** out);
PCBF_API void pcbf_dataset_free(pcbf_dataset* data);
PCBF_API pcbf_status pcbf_dataset_add(pcbf_dataset* data, const double* perceived,
                                      const double* actual);
/* Row count after duplicate merging; -1 on error. */
PCBF_API int pcbf_dataset_size(const pcbf_dataset* data);
PCBF_API pcbf_status pcbf_dataset_load_csv(const char* path, pcbf_dataset** out);
PCBF_API pcbf_status pcbf_dataset_save_csv(const pcbf_dataset* data, const char* path);

/* ---- Confidence-set estimators ---- */

/* config_json: optional (may be NULL) object with "estimator", "gp", and
 * "seed" sections in the shared schema. */
PCBF_API pcbf_status pcbf_estimator_fit(const pcbf_dataset* data, const char* config_json,
                                        pcbf_estimator** out);
PCBF_API pcbf_status pcbf_estimator_load(const char* path, const char* config_json,
                                         pcbf_estimator** out);
PCBF_API pcbf_status pcbf_estimator_save(const pcbf_estimator* est, const char* path);
/* Degenerate estimator centered on the measurement itself. */
PCBF_API pcbf_status pcbf_estimator_identity(int dim, double min_semiaxis,
                                             pcbf_estimator** out);
PCBF_API void pcbf_estimator_free(pcbf_estimator* est);
/* center and semiaxes are caller-allocated arrays of the state dimension. */
PCBF_API pcbf_status pcbf_estimator_estimate(const pcbf_estimator* est, const double* xhat,
                                             double* center, double* semiaxes);
/* State dimension of the estimator; -1 on error. */
PCBF_API int pcbf_estimator_dim(const pcbf_estimator* est);

/* ---- Network checkpoints ---- */

PCBF_API pcbf_status pcbf_mlp_load(const char* path, pcbf_mlp** out);
PCBF_API pcbf_status pcbf_mlp_save(const pcbf_mlp* net, const char* path);
PCBF_API void pcbf_mlp_free(pcbf_mlp* net);
PCBF_API pcbf_status pcbf_mlp_dims(const pcbf_mlp* net, int* in_dim, int* out_dim);
PCBF_API pcbf_status pcbf_mlp_forward(const pcbf_mlp* net, const double* x, int in_dim,
                                      double* out, int out_dim);

/* ---- Orchestration ---- */

/* Returns PCBF_OK on success, PCBF_SYNTH_HARD when the iteration budget ran
 * out with hard measurements remaining (outputs are still written). */
PCBF_API pcbf_status pcbf_synthesize(const char* config_json);

/* On success fills unsafe_ratio (if non-NULL) and writes the canonical
 * "unsafe_ratio=<value>" line into line (if non-NULL, truncated to
 * line_cap). */
PCBF_API pcbf_status pcbf_evaluate(const char* config_json, double* unsafe_ratio,
                                   char* line, size_t line_cap);

PCBF_API pcbf_status pcbf_sweep(const char* config_json);

PCBF_API pcbf_status pcbf_density(const char* config_json);

#ifdef __cplusplus
}
#endif

#endif /* PCBF_H */
