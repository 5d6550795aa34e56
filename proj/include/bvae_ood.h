/* C interface to the Bayesian VAE out-of-distribution toolkit.
 *
 * Every fallible call returns a bvo_status; BVO_OK means success and anything
 * else leaves a thread-local diagnostic readable via bvo_last_error(). Objects
 * are opaque handles created into out-parameters and released with the
 * matching *_free(); passing NULL to a *_free() is a no-op.
 */
#ifndef BVAE_OOD_H
#define BVAE_OOD_H

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define BVO_API __attribute__((visibility("default")))
#else
#define BVO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bvo_status {
  BVO_OK = 0,
  BVO_E_INVALID_ARGUMENT = 1,
  BVO_E_DIMENSION = 2,
  BVO_E_DOMAIN = 3,
  BVO_E_FORMAT = 4,
  BVO_E_LENGTH = 5,
  BVO_E_INTEGRITY = 6,
  BVO_E_FETCH = 7,
  BVO_E_NUMERIC = 8,
  BVO_E_DIVERGENCE = 9,
  BVO_E_CONFIG = 10,
  BVO_E_IO = 11,
  BVO_E_INTERNAL = 12,
} bvo_status;

/* Build revision string, e.g. "0.1.0+abc123". Never NULL. */
BVO_API const char* bvo_version(void);

/* Message for this thread's most recent failure; "" if none. */
BVO_API const char* bvo_last_error(void);

typedef struct bvo_dataset bvo_dataset;
typedef struct bvo_ensemble bvo_ensemble;

/* ---- datasets ------------------------------------------------------------ */

/* IDX files, optionally gzipped; labels_path may be NULL for images only. */
BVO_API bvo_status bvo_dataset_open_idx(const char* images_path, const char* labels_path,
                                        bvo_dataset** out);
BVO_API bvo_status bvo_dataset_save_idx(const bvo_dataset* ds, const char* images_path,
                                        const char* labels_path);

/* Procedural 28x28 grayscale shape classes (labels = class ids). */
BVO_API bvo_status bvo_dataset_synthetic_shapes(size_t n_per_class, const int* class_ids,
                                                size_t n_classes, uint64_t seed,
                                                bvo_dataset** out);

/* Rows whose label is in held_out land in *held, the rest in *kept. */
BVO_API bvo_status bvo_dataset_split_classes(const bvo_dataset* ds, const int* held_out,
                                             size_t n_held_out, bvo_dataset** kept,
                                             bvo_dataset** held);

/* Each pixel replaced with probability mu by a uniform draw from {0..255}/255. */
BVO_API bvo_status bvo_dataset_corrupt(const bvo_dataset* ds, double mu, uint64_t seed,
                                       bvo_dataset** out);

/* Seeded subsample of n rows without replacement. */
BVO_API bvo_status bvo_dataset_take(const bvo_dataset* ds, size_t n, uint64_t seed,
                                    bvo_dataset** out);

/* Accessors return 0 on a NULL handle. */
BVO_API size_t bvo_dataset_count(const bvo_dataset* ds);
BVO_API int bvo_dataset_dim(const bvo_dataset* ds);

/* Content digest; out_hex holds 64 hex chars plus NUL (65 bytes). */
BVO_API bvo_status bvo_dataset_digest(const bvo_dataset* ds, char out_hex[65]);

BVO_API void bvo_dataset_free(bvo_dataset* ds);

/* ---- posterior ensembles --------------------------------------------------- */

/* config_json uses the CLI's train schema, e.g.
 *   {"variant":2,"arch":{"hidden":[256],"d_z":32,"likelihood":"bernoulli"},
 *    "epochs":30,"sghmc":{"step_size":1e-4,"burn_in":10,"thinning":2},"seed":1}
 * Unknown keys are errors. */
BVO_API bvo_status bvo_train(const bvo_dataset* train, const char* config_json,
                             bvo_ensemble** out);

BVO_API bvo_status bvo_ensemble_load(const char* path, bvo_ensemble** out);
BVO_API bvo_status bvo_ensemble_save(const bvo_ensemble* ens, const char* path);

/* Accessors return 0 on a NULL handle. */
BVO_API size_t bvo_ensemble_members(const bvo_ensemble* ens);
BVO_API int bvo_ensemble_variant(const bvo_ensemble* ens);
BVO_API int bvo_ensemble_latent_dim(const bvo_ensemble* ens);

BVO_API bvo_status bvo_ensemble_digest(const bvo_ensemble* ens, char out_hex[65]);

BVO_API void bvo_ensemble_free(bvo_ensemble* ens);

/* ---- scoring --------------------------------------------------------------- */

/* Per-member K-sample log-likelihood estimates for one input of length d;
 * out must hold bvo_ensemble_members() doubles. Members sharing an encoder
 * are scored under identical latent draws. */
BVO_API bvo_status bvo_ensemble_log_liks(const bvo_ensemble* ens, const double* x, size_t d,
                                         int K, uint64_t seed, double* out);

/* Single-input score for a context-free method: "ess", "kl", "ll" or "waic"
 * ("llr" and "tt" need a background model or training mean; run those through
 * bvo_run's score command). out[0] = raw value, out[1] = the orientation-
 * normalized value where larger always means more out-of-distribution. */
BVO_API bvo_status bvo_score_input(const bvo_ensemble* ens, const char* method, const double* x,
                                   size_t d, int K, uint64_t seed, double out[2]);

/* ---- detection metrics ------------------------------------------------------ */
/* labels are 0 (in-distribution) / 1 (out); scores are in the normalized
 * orientation. Both classes must be present. */

BVO_API bvo_status bvo_auroc(const double* scores, const int* labels, size_t n, double* out);

/* positive_is_ood selects which class counts as positive for the PR curve. */
BVO_API bvo_status bvo_auprc(const double* scores, const int* labels, size_t n,
                             int positive_is_ood, double* out);

BVO_API bvo_status bvo_fpr_at_tpr(const double* scores, const int* labels, size_t n,
                                  double tpr_target, double* out);

/* ---- command runs ----------------------------------------------------------- */

/* Executes one command described as JSON:
 *   {"command":"score","config":{...},"inputs":{"role":"path"},
 *    "outputs":{"role":"path"}}
 * Commands: synth-data, fetch-data, train, train-background, score, eval,
 * latent-eval. On success the run's manifest is written to manifest_path
 * (skipped when NULL) and, when manifest_json_out is non-NULL, returned as a
 * malloc'd JSON string the caller releases with bvo_string_free. */
BVO_API bvo_status bvo_run(const char* request_json, const char* manifest_path,
                           char** manifest_json_out);

/* Re-executes a saved manifest with outputs redirected into out_dir. Inputs
 * are re-digested and must match the recorded values. */
BVO_API bvo_status bvo_rerun(const char* manifest_path, const char* out_dir,
                             const char* new_manifest_path, char** manifest_json_out);

BVO_API void bvo_string_free(char* s);

/* ---- utilities --------------------------------------------------------------- */

BVO_API bvo_status bvo_sha256_file(const char* path, char out_hex[65]);

#ifdef __cplusplus
}
#endif

#endif /* BVAE_OOD_H */
