#ifndef APC_APC_H
#define APC_APC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define APC_API __declspec(dllexport)
#else
#define APC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum apc_status {
  APC_OK = 0,
  APC_ERR_INVALID_ARGUMENT = 1,
  APC_ERR_PARAMETER_DOMAIN = 2,
  APC_ERR_CONFIG = 3,
  APC_ERR_DEGENERATE_POSTERIOR = 4,
  APC_ERR_NO_ESTIMATE = 5,
  APC_ERR_SEQUENCING = 6,
  APC_ERR_SESSION_COMPLETE = 7,
  APC_ERR_STATE = 8,
  APC_ERR_INTEGRITY = 9,
  APC_ERR_INGEST = 10,
  APC_ERR_COVERAGE = 11,
  APC_ERR_IDENTIFIABILITY = 12,
  APC_ERR_UNDEFINED_METRIC = 13,
  APC_ERR_DEGENERATE_SCALE = 14,
  APC_ERR_INSUFFICIENT_DATA = 15,
  APC_ERR_FIT_FAILURE = 16,
  APC_ERR_PAIRING = 17,
  APC_ERR_UNDEFINED_EFFECT = 18,
  APC_ERR_IO = 19,
  APC_ERR_VALIDATION = 20,
  APC_ERR_NOT_FOUND = 21,
  APC_ERR_INTERNAL = 99
} apc_status;

/* Kebab-case name of a status, e.g. "integrity". Static storage. */
APC_API const char* apc_status_name(apc_status status);
/* Message of the last failed call on this thread; "" after success. */
APC_API const char* apc_last_error(void);
/* Releases strings returned through char** out-parameters. */
APC_API void apc_free_string(char* s);
APC_API const char* apc_version(void);

/* ---- sessions ---- */

typedef struct apc_session apc_session;

/* config_json: {"variants": [...], "clips": [...], "policy": "bald", "seed": 1, ...} */
APC_API apc_status apc_session_create(const char* config_json, apc_session** out);
/* Rebuilds a session from a JSONL event log, verifying every event. */
APC_API apc_status apc_session_open_log(const char* log_path, apc_session** out);
APC_API void apc_session_destroy(apc_session* session);
/* Full plan JSON including the reference level (not blinded). */
APC_API apc_status apc_session_next_trial(apc_session* session, char** plan_json);
/* answer: "first" or "second". */
APC_API apc_status apc_session_record(apc_session* session, size_t trial_index, const char* answer);
APC_API apc_status apc_session_estimates(const apc_session* session, char** estimates_json);
APC_API apc_status apc_session_progress(const apc_session* session, size_t* completed,
                                        size_t* total, int* complete);

/* ---- simulation ---- */

typedef struct apc_sim_options {
  const char* policies; /* comma separated; NULL or "" for all */
  size_t observers;
  size_t trials;
  uint64_t seed;
  double slope;
  double lapse;
  int fixed_q;   /* nonzero: every observer has midpoint q */
  double q;
  double q_lo;   /* otherwise midpoints ~ Uniform(q_lo, q_hi) */
  double q_hi;
  unsigned threads; /* 0: hardware concurrency */
} apc_sim_options;

APC_API void apc_sim_options_init(apc_sim_options* options);
/* MSE curves as CSV text. */
APC_API apc_status apc_simulate(const apc_sim_options* options, char** csv);

/* ---- reference scale ---- */

APC_API apc_status apc_scale_build(const char* rd_path, size_t levels, const char* out_path);
/* levels 0: infer from the largest level in the judgments. report_json may be NULL. */
APC_API apc_status apc_scale_fit_pairs(const char* judgments_path, size_t levels,
                                       const char* out_path, char** report_json);
/* rd_path may be NULL; with it, resampled levels re-select resolution and CRF. */
APC_API apc_status apc_scale_linearize(const char* scale_path, const char* curve_path,
                                       const char* rd_path, const char* out_path);
APC_API apc_status apc_scale_nmse(const char* curve_path, double* nmse);

/* ---- analysis ---- */

/* Per rater and variant logistic fits with screening verdicts. */
APC_API apc_status apc_fit_responses(const char* responses_path, const char* out_path,
                                     char** summary_json);
/* Paired comparisons a_paths[i] vs b_paths[i], each a rater_id,score CSV. */
APC_API apc_status apc_effect_size(const char* const* a_paths, const char* const* b_paths,
                                   size_t n_comparisons, size_t family_size, double alpha,
                                   char** report_json);
APC_API apc_status apc_analyze_ratings(const char* ratings_path, char** report_json);

/* ---- service ---- */

typedef struct apc_server apc_server;

typedef struct apc_server_options {
  const char* host;
  int port; /* 0 picks a free port */
  const char* data_dir;
  const char* const* manifest_paths;
  size_t n_manifests;
  const char* rater_token;        /* NULL: rater endpoints are open */
  const char* experimenter_token; /* NULL: estimates are open */
  int sync_writes;
} apc_server_options;

APC_API void apc_server_options_init(apc_server_options* options);
/* Loads manifests, rebuilds sessions from data_dir and binds the port. */
APC_API apc_status apc_server_create(const apc_server_options* options, apc_server** out);
APC_API int apc_server_port(const apc_server* server);
/* JSON array of logs that could not be rebuilt. */
APC_API apc_status apc_server_load_errors(const apc_server* server, char** json);
/* Blocks until apc_server_stop is called from another thread. */
APC_API apc_status apc_server_run(apc_server* server);
APC_API void apc_server_stop(apc_server* server);
APC_API void apc_server_destroy(apc_server* server);

#ifdef __cplusplus
}
#endif

#endif
