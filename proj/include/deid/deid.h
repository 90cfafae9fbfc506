/* Public C API of the identity de-identification library.
 *
 * Usage pattern: create a session from a JSON run configuration, point it at
 * an output directory, then drive the pipeline stages. Every call returns
 * DEID_OK or an error class; deid_last_error() describes the most recent
 * failure on the session as JSON {"code", "kind", "message"}.
 *
 * Artifact layout under the output directory:
 *   world.dat            synthetic dataset (world-gen)
 *   experts/             frozen expert + extractor checkpoints (expert-train)
 *   bundle/              trained pipeline (train)
 *   reports/             evaluation, attack and audit outputs (eval/attack/audit)
 *   sweep/               consolidated noise-sweep CSV (sweep)
 */
#ifndef DEID_H
#define DEID_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define DEID_OK 0
#define DEID_ERR_CONFIG 2   /* bad configuration, dimensions, or input data */
#define DEID_ERR_PROTOCOL 3 /* evaluation protocol violation */
#define DEID_ERR_NUMERIC 4  /* numeric failure or training divergence */
#define DEID_ERR_IO 5       /* file, format, version, or checksum problems */

typedef struct deid_session deid_session;

const char* deid_version(void);

/* config_json may be NULL or empty for the built-in defaults. On success
 * *out_session owns the session; destroy it with deid_session_destroy. */
int deid_session_create(const char* config_json, deid_session** out_session);
int deid_session_create_from_file(const char* config_path,
                                  deid_session** out_session);
void deid_session_destroy(deid_session* session);

/* JSON description of the last error on this session; empty object when the
 * last call succeeded. The pointer stays valid until the next call. */
const char* deid_last_error(const deid_session* session);

/* JSON array of warnings produced by the most recent eval on this session
 * (e.g. an impostor pair count too small for the FPR target). */
const char* deid_last_warnings(const deid_session* session);

/* Overrides applied on top of the loaded configuration. */
int deid_set_seed(deid_session* session, unsigned long long master_seed);
int deid_set_output_dir(deid_session* session, const char* dir);

/* Hash of the effective configuration (seeds included); embedded in every
 * artifact this session writes. */
const char* deid_config_hash(deid_session* session);

/* Pipeline stages. Paths are relative to the session output directory;
 * bundle_dir may be NULL to use "<output_dir>/bundle". */
int deid_world_gen(deid_session* session);
int deid_expert_train(deid_session* session);
int deid_train(deid_session* session);
int deid_eval(deid_session* session, const char* bundle_dir);
int deid_attack(deid_session* session, const char* bundle_dir);

/* Runs the Laplace-mechanism ratio audit configured in the session. Sets
 * *out_passed to 1/0. A failing audit is a successful call. */
int deid_audit_ldp(deid_session* session, int* out_passed);

/* parameter is "beta" or "alpha"; writes sweep/sweep.csv. */
int deid_sweep(deid_session* session, const char* parameter,
               const double* values, size_t n_values);

#ifdef __cplusplus
}
#endif

#endif /* DEID_H */
