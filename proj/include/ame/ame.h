/*
 * C interface to the ame forecasting library.
 *
 * All functions return 0 on success and a nonzero error code otherwise;
 * ame_last_error() describes the most recent failure on the calling thread.
 * Objects returned through out-parameters are owned by the caller and must
 * be released with the matching *_free function.
 */
#ifndef AME_AME_H
#define AME_AME_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ame_dataset ame_dataset;
typedef struct ame_model ame_model;

/* error codes mirror the library's internal categories */
enum {
  AME_OK = 0,
  AME_E_IO = 1,
  AME_E_PARSE = 2,
  AME_E_INVALID_ARGUMENT = 3,
  AME_E_INVALID_CONFIG = 4,
  AME_E_SHAPE = 5,
  AME_E_DEGENERATE = 6,
  AME_E_DIVERGENCE = 7,
  AME_E_VERSION = 8,
  AME_E_MISMATCH = 9,
  AME_E_INTERNAL = 10
};

/* Message for the last failing call on this thread; empty string if none. */
const char* ame_last_error(void);

void ame_free_string(char* s);

/* ---- datasets ---- */

int ame_dataset_load(const char* path, ame_dataset** out);

/* spec_json: {"count", "length", "noise_level", "seed", "regime_mix": {...}} */
int ame_dataset_synth(const char* spec_json, ame_dataset** out);

int ame_dataset_save(const ame_dataset* ds, const char* path);
int64_t ame_dataset_size(const ame_dataset* ds);
void ame_dataset_free(ame_dataset* ds);

/* Analytical structural profile of one series (variate-averaged):
 * out4 = [forecastability, seasonality, trend, sparsity]. */
int ame_profile_series(const ame_dataset* ds, int64_t index, double out4[4]);

/* ---- models ---- */

int ame_model_load(const char* checkpoint_dir, ame_model** out);
void ame_model_free(ame_model* m);

/* context: n_variates * t_ctx values, variate-major; out: n_variates * t_hor. */
int ame_forecast(const ame_model* m, const double* context, int64_t t_ctx, int64_t n_variates,
                 int64_t t_hor, double* out);

/* Regime profile as used by the model's frozen regime source. */
int ame_model_profile(const ame_model* m, const double* values, int64_t t, double out4[4]);

/* ---- pipelines ----
 *
 * subcommand: synth | profile | train-regime | train | eval | finetune |
 *             analyze | ablate
 * config_json: experiment configuration document (see README).
 * result_json: on success, a malloc'd JSON report; free with ame_free_string.
 */
int ame_run(const char* subcommand, const char* config_json, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* AME_AME_H */
