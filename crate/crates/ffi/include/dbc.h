#ifndef DBC_H
#define DBC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum DbcStatus {
  DBC_STATUS_OK = 0,
  DBC_STATUS_NULL_POINTER = 1,
  // Invalid parameters.
  DBC_STATUS_CONFIG = 2,
  // Malformed or non-finite input data.
  DBC_STATUS_DATA = 3,
  // Engine or I/O failure.
  DBC_STATUS_RUNTIME = 4,
  // Internal panic caught at the boundary.
  DBC_STATUS_PANIC = 5,
} DbcStatus;

typedef enum DbcFormat {
  DBC_FORMAT_CSV = 0,
  DBC_FORMAT_DBCF = 1,
} DbcFormat;

typedef enum DbcCriterion {
  DBC_CRITERION_DISPERSION = 0,
  DBC_CRITERION_DISPERSION_NO_REG = 1,
  DBC_CRITERION_SINGLE_LINKAGE = 2,
  DBC_CRITERION_SINGLE_LINKAGE_SIZE_REG = 3,
} DbcCriterion;

typedef enum DbcIntraMode {
  DBC_INTRA_MODE_PAPER = 0,
  DBC_INTRA_MODE_EXACT = 1,
} DbcIntraMode;

// Finished clustering run.
typedef struct DbcClustering DbcClustering;

// Feature matrix with optional ground-truth identities.
typedef struct DbcStore DbcStore;

// Clustering parameters. `target_clusters == 0` merges stage by stage
// while more clusters than one stage's merges remain.
typedef struct DbcClusterOptions {
  enum DbcCriterion criterion;
  double lambda;
  double merge_percent;
  enum DbcIntraMode intra_mode;
  size_t target_clusters;
} DbcClusterOptions;

// One merge: clusters `a < b` (indices before the merge) became `new_id`.
typedef struct DbcMergeEvent {
  size_t stage;
  size_t step;
  size_t a;
  size_t b;
  double value;
  size_t new_id;
  size_t n_a;
  size_t n_b;
} DbcMergeEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call on the same thread.
const char *dbc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dbc_version(void);

// Copy `n × dim` row-major values into a new store with ids "0".."n-1".
//
// # Safety
// `values` must point to `n * dim` readable doubles; `out` must be writable.
enum DbcStatus dbc_store_new(const double *values, size_t n, size_t dim, struct DbcStore **out);

// Load a store from a CSV or DBCF file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DbcStatus dbc_store_from_file(const char *path, enum DbcFormat format, struct DbcStore **out);

// Attach one ground-truth identity per sample.
//
// # Safety
// `store` must be a live handle; `labels` must point to `n` readable values.
enum DbcStatus dbc_store_set_ground_truth(struct DbcStore *store, const int64_t *labels, size_t n);

// # Safety
// `store` must be a live handle; `n` and `dim` must be writable.
enum DbcStatus dbc_store_shape(const struct DbcStore *store, size_t *n, size_t *dim);

// Copy the row-major values into `out`, which must hold `n * dim` doubles.
//
// # Safety
// `store` must be a live handle; `out` must point to `len` writable doubles.
enum DbcStatus dbc_store_values(const struct DbcStore *store, double *out, size_t len);

// New store whose rows are scaled to unit norm.
//
// # Safety
// `store` must be a live handle; `out` must be writable.
enum DbcStatus dbc_store_normalize(const struct DbcStore *store, struct DbcStore **out);

// # Safety
// `store` must be null or a handle not yet freed.
void dbc_store_free(struct DbcStore *store);

// Defaults: dispersion criterion, λ = 0.5, 5% merges per stage, paper
// intra updates, stage loop stop.
struct DbcClusterOptions dbc_cluster_options_default(void);

// Cluster the store's features. A null `options` uses the defaults.
//
// # Safety
// `store` must be a live handle; `options` null or readable; `out` writable.
enum DbcStatus dbc_cluster(const struct DbcStore *store,
                           const struct DbcClusterOptions *options,
                           struct DbcClustering **out);

// # Safety
// `clustering` must be a live handle; the outputs must be writable.
enum DbcStatus dbc_clustering_counts(const struct DbcClustering *clustering,
                                     size_t *num_samples,
                                     size_t *num_clusters,
                                     size_t *num_merges);

// Copy the dense cluster label of every sample into `out[0..len]`;
// `len` must equal the sample count.
//
// # Safety
// `clustering` must be a live handle; `out` must hold `len` values.
enum DbcStatus dbc_clustering_labels(const struct DbcClustering *clustering,
                                     size_t *out,
                                     size_t len);

// Copy the merge log into `out[0..len]`; `len` must equal the merge count.
//
// # Safety
// `clustering` must be a live handle; `out` must hold `len` events.
enum DbcStatus dbc_clustering_merges(const struct DbcClustering *clustering,
                                     struct DbcMergeEvent *out,
                                     size_t len);

// # Safety
// `clustering` must be null or a handle not yet freed.
void dbc_clustering_free(struct DbcClustering *clustering);

// Pairwise F1 and purity of `predicted` against `truth`, both of length `n`.
//
// # Safety
// The arrays must hold `n` values; `f1` and `purity` must be writable.
enum DbcStatus dbc_partition_scores(const size_t *predicted,
                                    const int64_t *truth,
                                    size_t n,
                                    double *f1,
                                    double *purity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DBC_H */
