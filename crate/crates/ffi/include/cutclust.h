#ifndef CUTCLUST_H
#define CUTCLUST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  // Null pointer, bad UTF-8, or a buffer of the wrong length.
  CC_STATUS_INVALID_ARGUMENT = 1,
  CC_STATUS_CONFIG_ERROR = 2,
  CC_STATUS_DATA_ERROR = 3,
  CC_STATUS_NUMERICAL_ERROR = 4,
  // A Rust panic was caught at the boundary.
  CC_STATUS_INTERNAL_ERROR = 5,
} CcStatus;

// Opaque run configuration.
typedef struct CcConfig CcConfig;

// Opaque expression matrix.
typedef struct CcMatrix CcMatrix;

// Opaque training result.
typedef struct CcResult CcResult;

// Clustering quality against supplied ground truth.
typedef struct CcMetrics {
  double acc;
  double nmi;
  double ari;
} CcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next `cc_*` call on the same thread.
const char *cc_last_error(void);

// Library version as a static NUL-terminated string.
const char *cc_version(void);

// Loads a cells × genes matrix from CSV or MatrixMarket (chosen by extension).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CcStatus cc_matrix_load(const char *path, struct CcMatrix **out);

// Builds a raw count matrix from `n_cells * n_genes` row-major values.
//
// # Safety
// `data` must point to `n_cells * n_genes` readable doubles; `out` must be writable.
enum CcStatus cc_matrix_from_dense(const double *data,
                                   size_t n_cells,
                                   size_t n_genes,
                                   struct CcMatrix **out);

// # Safety
// `m` must be a live matrix handle; the out pointers may be null.
enum CcStatus cc_matrix_shape(const struct CcMatrix *m, size_t *n_cells, size_t *n_genes);

// # Safety
// `m` must be null or a handle not yet freed.
void cc_matrix_free(struct CcMatrix *m);

// Default configuration; never null.
struct CcConfig *cc_config_new(void);

// Parses a JSON configuration; unknown keys are rejected.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CcStatus cc_config_from_json(const char *json, struct CcConfig **out);

// # Safety
// `cfg` must be a live config handle.
enum CcStatus cc_config_set_seed(struct CcConfig *cfg, uint64_t seed);

// Fixes the number of clusters; 0 means take it from the truth labels.
//
// # Safety
// `cfg` must be a live config handle.
enum CcStatus cc_config_set_k(struct CcConfig *cfg, size_t k);

// Resolved configuration as JSON. Free with [`cc_string_free`].
//
// # Safety
// `cfg` must be a live config handle; `out` must be writable.
enum CcStatus cc_config_to_json(const struct CcConfig *cfg, char **out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void cc_config_free(struct CcConfig *cfg);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void cc_string_free(char *s);

// Trains on `m`. `truth` may be null; otherwise it holds `truth_len`
// labels, one per cell, and metrics become available on the result.
//
// # Safety
// `m` and `cfg` must be live handles, `truth` null or readable for
// `truth_len` values, and `out` writable.
enum CcStatus cc_run(const struct CcMatrix *m,
                     const struct CcConfig *cfg,
                     const size_t *truth,
                     size_t truth_len,
                     struct CcResult **out);

// # Safety
// `r` must be a live result handle; the out pointers may be null.
enum CcStatus cc_result_shape(const struct CcResult *r,
                              size_t *n_cells,
                              size_t *k,
                              size_t *embedding_dim);

// Copies the hard cluster labels into `buf`, which must hold exactly `n_cells` values.
//
// # Safety
// `r` must be a live result handle and `buf` writable for `len` values.
enum CcStatus cc_result_labels(const struct CcResult *r, size_t *buf, size_t len);

// Copies the row-major `n_cells × embedding_dim` embedding into `buf`.
//
// # Safety
// `r` must be a live result handle and `buf` writable for `len` values.
enum CcStatus cc_result_embedding(const struct CcResult *r, double *buf, size_t len);

// Copies the row-major `n_cells × k` soft assignments into `buf`.
//
// # Safety
// `r` must be a live result handle and `buf` writable for `len` values.
enum CcStatus cc_result_soft_assignments(const struct CcResult *r, double *buf, size_t len);

// Metrics against the truth passed to [`cc_run`]. Fails with
// `DataError` when the run had no truth labels.
//
// # Safety
// `r` must be a live result handle; `out` must be writable.
enum CcStatus cc_result_metrics(const struct CcResult *r, struct CcMetrics *out);

// Writes the same artifacts as the CLI `run` subcommand into `dir`.
//
// # Safety
// `r` must be a live result handle; `dir` a NUL-terminated string.
enum CcStatus cc_result_write(const struct CcResult *r, const char *dir);

// # Safety
// `r` must be null or a handle not yet freed.
void cc_result_free(struct CcResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUTCLUST_H */
