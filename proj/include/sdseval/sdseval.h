/* SPDX-License-Identifier: Apache-2.0 */
#ifndef SDSEVAL_SDSEVAL_H
#define SDSEVAL_SDSEVAL_H

/*
 * C interface to the sdseval library: soft discrimination scoring and
 * answer-ranking metrics for pre-trained multi-modal models, benchmark
 * reformatting, and checkpoint-series analysis.
 *
 * Every function returns an sdseval_status. On failure a message is
 * available from sdseval_last_error() on the calling thread until the next
 * call on that thread. Strings returned through `char**` are owned by the
 * caller and released with sdseval_string_free().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(SDSEVAL_BUILDING)
#    define SDSEVAL_API __declspec(dllexport)
#  else
#    define SDSEVAL_API __declspec(dllimport)
#  endif
#else
#  define SDSEVAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values 2, 3 and 4 double as CLI exit codes. */
typedef enum sdseval_status {
  SDSEVAL_OK = 0,
  SDSEVAL_ERROR = 1,
  SDSEVAL_CONFIG_ERROR = 2,
  SDSEVAL_PARTIAL = 3,
  SDSEVAL_VALIDATION_FAILED = 4,
  SDSEVAL_INVALID_ARGUMENT = 5,
  SDSEVAL_PARSE_ERROR = 6,
  SDSEVAL_IO_ERROR = 7,
  SDSEVAL_PROVIDER_ERROR = 8,
  SDSEVAL_CLIENT_ERROR = 9
} sdseval_status;

typedef struct sdseval_samples sdseval_samples;
typedef struct sdseval_provider sdseval_provider;

SDSEVAL_API const char* sdseval_version(void);
SDSEVAL_API const char* sdseval_last_error(void);
SDSEVAL_API void sdseval_string_free(char* s);

/* ---- metrics ---------------------------------------------------------- */

SDSEVAL_API sdseval_status sdseval_mean_logit(const double* logits, size_t n, double* out);
/* Softmax over n >= 2 mean logits; writes n values to out. */
SDSEVAL_API sdseval_status sdseval_normalize_scores(const double* mean_logits, size_t n, double* out);
/* Mean of n p_correct values. */
SDSEVAL_API sdseval_status sdseval_sds(const double* p_correct, size_t n, double* out);
/* nlls holds n_seq sequences back to back; lengths[i] is the i-th length. */
SDSEVAL_API sdseval_status sdseval_mean_nll(const double* nlls, const size_t* lengths, size_t n_seq, double* out);
SDSEVAL_API sdseval_status sdseval_perplexity(const double* nlls, const size_t* lengths, size_t n_seq, double* out);
SDSEVAL_API sdseval_status sdseval_pearson(const double* x, const double* y, size_t n, double* out);

/* ---- benchmark data --------------------------------------------------- */

/* expected_task may be NULL. */
SDSEVAL_API sdseval_status sdseval_samples_load(const char* path, const char* expected_task, sdseval_samples** out);
SDSEVAL_API size_t sdseval_samples_count(const sdseval_samples* samples);
/* Canonical one-line record of sample i. */
SDSEVAL_API sdseval_status sdseval_samples_get_json(const sdseval_samples* samples, size_t i, char** out);
SDSEVAL_API void sdseval_samples_free(sdseval_samples* samples);

/* Writes the validation report (JSON) to report_json when non-NULL.
 * Returns SDSEVAL_VALIDATION_FAILED when the manifest does not validate. */
SDSEVAL_API sdseval_status sdseval_validate_manifest(const char* manifest_path, char** report_json,
                                                     char** report_text);

/* ---- providers -------------------------------------------------------- */

/* Plugin callbacks. Return 0 on success; on failure return nonzero and
 * optionally write a message into err (err_cap bytes). */
typedef struct sdseval_plugin_vtable {
  void* user_data;
  int reentrant;
  int provides_nll;
  /* Scores candidate `candidate` of the sample given as a canonical JSON
   * record. Writes at most cap logits; sets *count to the token count. */
  int (*score_tokens)(void* user_data, const char* sample_json, size_t candidate, double* logits, size_t cap,
                      size_t* count, char* err, size_t err_cap);
  /* Same contract for per-token NLLs; may be NULL when provides_nll is 0. */
  int (*label_nll)(void* user_data, const char* sample_json, size_t candidate, double* nlls, size_t cap,
                   size_t* count, char* err, size_t err_cap);
  /* Called when the registration is removed; may be NULL. */
  void (*destroy)(void* user_data);
} sdseval_plugin_vtable;

/* Registers a provider reachable as {"kind":"plugin","params":{"plugin":id}}. */
SDSEVAL_API sdseval_status sdseval_register_plugin(const char* id, const sdseval_plugin_vtable* vtable);
SDSEVAL_API sdseval_status sdseval_unregister_plugin(const char* id);

/* spec_json: {"kind": "...", "params": {...}}. base_dir resolves relative
 * files and may be NULL. */
SDSEVAL_API sdseval_status sdseval_provider_create(const char* spec_json, const char* base_dir,
                                                   sdseval_provider** out);
SDSEVAL_API void sdseval_provider_free(sdseval_provider* provider);
SDSEVAL_API int sdseval_provider_provides_nll(const sdseval_provider* provider);
/* Writes at most cap logits; *count receives the token count even when it
 * exceeds cap (then SDSEVAL_INVALID_ARGUMENT is returned). */
SDSEVAL_API sdseval_status sdseval_provider_score_tokens(const sdseval_provider* provider,
                                                         const sdseval_samples* samples, size_t sample_index,
                                                         size_t candidate, double* logits, size_t cap, size_t* count);
SDSEVAL_API sdseval_status sdseval_provider_label_nll(const sdseval_provider* provider, const sdseval_samples* samples,
                                                      size_t sample_index, size_t candidate, double* nlls, size_t cap,
                                                      size_t* count);

/* ---- pipelines (one per CLI subcommand) -------------------------------- */

SDSEVAL_API sdseval_status sdseval_reformat(const char* source_config_path, const char* policy_path,
                                            char** summary_json);

typedef struct sdseval_evaluate_options {
  /* 0 means unlimited. */
  size_t max_new_samples;
  /* 0 keeps the configured worker count. */
  size_t worker_override;
} sdseval_evaluate_options;

/* options may be NULL. Returns SDSEVAL_PARTIAL when samples failed or the
 * run stopped early; summary_json is filled in either case. */
SDSEVAL_API sdseval_status sdseval_evaluate(const char* run_config_path, const sdseval_evaluate_options* options,
                                            char** summary_json);

/* results: n_results paths (results.jsonl files or run directories).
 * group_by: "source" | "task" | "ability"; format: "tsv" | "json" | "text".
 * Writes to output_path when non-NULL and returns the rendering in out. */
SDSEVAL_API sdseval_status sdseval_report(const char* const* results, size_t n_results, const char* group_by,
                                          const char* format, const char* output_path, char** out);

/* Pearson r per label from two (step, label, score) tables. */
SDSEVAL_API sdseval_status sdseval_correlate(const char* pre_path, const char* post_path, char** out_tsv);

/* task_filter may be NULL; otherwise only results of that task label count. */
SDSEVAL_API sdseval_status sdseval_reliability(const char* results, const size_t* sizes, size_t n_sizes,
                                               size_t resamples, uint64_t seed, const char* task_filter,
                                               char** out_tsv);

typedef struct sdseval_series_options {
  const char* metric;    /* default "sds" */
  const char* group_by;  /* default "task" */
  const char* filter;    /* comma-separated group labels, NULL for all */
  const char* run_id;    /* NULL: the single run id present */
  int long_format;       /* nonzero: step/label/score rows */
  size_t saturation_window;  /* 0 disables the advisory saturation scan */
  double saturation_epsilon;
} sdseval_series_options;

SDSEVAL_API sdseval_status sdseval_series(const char* results_dir, const sdseval_series_options* options,
                                          char** out_tsv);

#ifdef __cplusplus
}
#endif

#endif /* SDSEVAL_SDSEVAL_H */
