#ifndef FLAVORNET_H
#define FLAVORNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FnStatus {
  FN_STATUS_OK = 0,
  FN_STATUS_SHAPE = 1,
  FN_STATUS_CONTRACT = 2,
  FN_STATUS_DOMAIN = 3,
  FN_STATUS_NON_FINITE = 4,
  FN_STATUS_KINK = 5,
  FN_STATUS_LOAD = 6,
  FN_STATUS_CONFIG = 7,
  FN_STATUS_DIVERGED = 8,
  FN_STATUS_ALL_TRIALS_FAILED = 9,
  FN_STATUS_IO = 10,
  FN_STATUS_JSON = 11,
  FN_STATUS_NULL_POINTER = 12,
  FN_STATUS_INVALID_UTF8 = 13,
  FN_STATUS_PANIC = 14,
} FnStatus;

// A trained RMSG model with its test metrics.
typedef struct FnRmsgModel FnRmsgModel;

// A Graph WaveNet forecaster.
typedef struct FnWaveNet FnWaveNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *fn_last_error(void);

// Library version as a static NUL-terminated string.
const char *fn_version(void);

// RMSG labels of an unweighted undirected graph. `edges` holds `n_edges`
// `(i, j)` pairs; `x` and `out` hold `n_nodes` values.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum FnStatus fn_rmsg_labels(uintptr_t n_nodes,
                             const uint32_t *edges,
                             uintptr_t n_edges,
                             const double *x,
                             double *out);

// Trains an RMSG model. `config_json` is an RMSG config object (fields
// not given keep their defaults) or null for the defaults.
//
// # Safety
// `config_json` must be null or NUL-terminated; `out` must be writable.
enum FnStatus fn_rmsg_train(const char *config_json, uint64_t seed, struct FnRmsgModel **out);

// Test-stream RMSE and R² of a trained model.
//
// # Safety
// `model` must come from [`fn_rmsg_train`]; outputs must be writable.
enum FnStatus fn_rmsg_test_metrics(const struct FnRmsgModel *model, double *rmse, double *r2);

// Number of trainable parameters, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from [`fn_rmsg_train`].
uintptr_t fn_rmsg_param_count(const struct FnRmsgModel *model);

// Per-node predictions on one graph, in the layout of [`fn_rmsg_labels`].
//
// # Safety
// `model` must come from [`fn_rmsg_train`]; pointers must be valid for the
// stated lengths.
enum FnStatus fn_rmsg_predict(const struct FnRmsgModel *model,
                              uintptr_t n_nodes,
                              const uint32_t *edges,
                              uintptr_t n_edges,
                              const double *x,
                              double *out);

// # Safety
// `model` must be null or come from [`fn_rmsg_train`], and not be used again.
void fn_rmsg_free(struct FnRmsgModel *model);

// Fresh forecaster from a WaveNet config object, or the defaults when null.
//
// # Safety
// `config_json` must be null or NUL-terminated; `out` must be writable.
enum FnStatus fn_wavenet_new(const char *config_json, uint64_t seed, struct FnWaveNet **out);

// Loads a forecaster saved by [`fn_wavenet_save`] or `flavornet traffic train`.
//
// # Safety
// `dir` must be NUL-terminated; `out` must be writable.
enum FnStatus fn_wavenet_load(const char *dir, struct FnWaveNet **out);

// # Safety
// `model` must come from this library; `dir` must be NUL-terminated.
enum FnStatus fn_wavenet_save(const struct FnWaveNet *model, const char *dir);

// Number of trainable parameters, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
uintptr_t fn_wavenet_param_count(const struct FnWaveNet *model);

// Shape of the model: sensors, input features, observation and forecast
// window lengths. Null outputs are skipped.
//
// # Safety
// `model` must come from this library; non-null outputs must be writable.
enum FnStatus fn_wavenet_dims(const struct FnWaveNet *model,
                              uintptr_t *n_nodes,
                              uintptr_t *in_dim,
                              uintptr_t *obs_window,
                              uintptr_t *forecast_window);

// Forecast from scaled inputs. `adjacency` is the dense `n × n` road graph
// (row-major); `window` is `[batch, in_dim, n, obs_window]` and `out`
// receives `[batch, n, forecast_window]`, both row-major.
//
// # Safety
// `model` must come from this library; pointers must be valid for the
// stated shapes.
enum FnStatus fn_wavenet_predict(const struct FnWaveNet *model,
                                 const double *adjacency,
                                 const double *window,
                                 uintptr_t batch,
                                 double *out);

// # Safety
// `model` must be null or come from this library, and not be used again.
void fn_wavenet_free(struct FnWaveNet *model);

// Masked forecast metrics at 1-based forecast steps `probes`. `pred`,
// `target` and `missing` are `[batch, n, steps]` row-major; a nonzero
// `missing` byte excludes that entry. Each of `rmse`, `mae` and `mape`
// (percent) receives `n_probes` values; `mean_mae` pools every observed
// entry of every step.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum FnStatus fn_traffic_metrics(const double *pred,
                                 const double *target,
                                 const uint8_t *missing,
                                 uintptr_t batch,
                                 uintptr_t n,
                                 uintptr_t steps,
                                 const uintptr_t *probes,
                                 uintptr_t n_probes,
                                 double *rmse,
                                 double *mae,
                                 double *mape,
                                 double *mean_mae);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLAVORNET_H */
