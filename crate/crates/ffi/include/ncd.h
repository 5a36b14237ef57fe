#ifndef NCD_H
#define NCD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcdStatus {
  NCD_STATUS_OK = 0,
  NCD_STATUS_NULL_POINTER = 1,
  NCD_STATUS_CONFIG = 2,
  NCD_STATUS_INPUT = 3,
  NCD_STATUS_DIMENSION = 4,
  NCD_STATUS_NUMERIC = 5,
  NCD_STATUS_IO = 6,
  NCD_STATUS_CHECKPOINT = 7,
  NCD_STATUS_PANIC = 8,
} NcdStatus;

typedef struct NcdConfig NcdConfig;

typedef struct NcdDataset NcdDataset;

typedef struct NcdModel NcdModel;

typedef struct NcdWtaHasher NcdWtaHasher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *ncd_last_error(void);

// Library version as a static string.
const char *ncd_version(void);

// Default run configuration.
//
// # Safety
// `out` must be a valid pointer.
enum NcdStatus ncd_config_default(struct NcdConfig **out);

// Parses and validates a JSON run configuration.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum NcdStatus ncd_config_from_json(const char *json, struct NcdConfig **out);

// # Safety
// `cfg` must come from this library or be null.
void ncd_config_free(struct NcdConfig *cfg);

// Synthetic dataset described by the configuration.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
enum NcdStatus ncd_dataset_generate(const struct NcdConfig *cfg, struct NcdDataset **out);

// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum NcdStatus ncd_dataset_read(const char *path, struct NcdDataset **out);

// # Safety
// `ds` must be a live dataset handle and `path` a nul-terminated string.
enum NcdStatus ncd_dataset_write(const struct NcdDataset *ds, const char *path);

// Number of records, or 0 for a null handle.
//
// # Safety
// `ds` must be a live dataset handle or null.
size_t ncd_dataset_len(const struct NcdDataset *ds);

// # Safety
// `ds` must come from this library or be null.
void ncd_dataset_free(struct NcdDataset *ds);

// Trains a model; `final_acc` (optional) receives the last epoch's ACC.
//
// # Safety
// Handles must be live; `out` must be valid; `final_acc` may be null.
enum NcdStatus ncd_train(const struct NcdConfig *cfg,
                         const struct NcdDataset *ds,
                         struct NcdModel **out,
                         double *final_acc);

// ACC of the model on the dataset's unlabelled records.
//
// # Safety
// Handles must be live and `acc` valid.
enum NcdStatus ncd_model_eval(const struct NcdModel *model,
                              const struct NcdDataset *ds,
                              double *acc);

// Writes the checkpoint.
//
// # Safety
// `model` must be live and `path` a nul-terminated string.
enum NcdStatus ncd_model_save(const struct NcdModel *model, const char *path);

// Loads a checkpoint whose shapes follow `cfg` resolved against `ds`.
//
// # Safety
// Handles must be live, `path` nul-terminated and `out` valid.
enum NcdStatus ncd_model_load(const struct NcdConfig *cfg,
                              const struct NcdDataset *ds,
                              const char *path,
                              struct NcdModel **out);

// Cluster ids for `rows` inputs. `audio` may be null for single-modal
// models; `labels` receives `rows` entries.
//
// # Safety
// Pointers must cover `rows * width` values of their modality.
enum NcdStatus ncd_model_predict(const struct NcdModel *model,
                                 const double *visual,
                                 const double *audio,
                                 size_t rows,
                                 size_t *labels);

// Resolved configuration of a model as JSON. Writes at most `cap` bytes
// including the terminator and stores the full length (without
// terminator) in `needed`.
//
// # Safety
// `buf` must hold `cap` bytes or be null with `cap == 0`.
enum NcdStatus ncd_model_config_json(const struct NcdModel *model,
                                     char *buf,
                                     size_t cap,
                                     size_t *needed);

// # Safety
// `model` must come from this library or be null.
void ncd_model_free(struct NcdModel *model);

// WTA hasher with `code_len` random permutations of `dim` entries.
//
// # Safety
// `out` must be valid.
enum NcdStatus ncd_wta_new(size_t dim,
                           size_t code_len,
                           size_t window,
                           size_t threshold,
                           uint64_t seed,
                           struct NcdWtaHasher **out);

// Hashes `dim` values into `code_len` symbols.
//
// # Safety
// `z` must hold `dim` values and `code` room for `code_len` symbols.
enum NcdStatus ncd_wta_hash(const struct NcdWtaHasher *h,
                            const double *z,
                            size_t dim,
                            uint32_t *code,
                            size_t code_len);

// Whether two vectors form a positive pair under the hasher's threshold.
//
// # Safety
// `a` and `b` must each hold `dim` values; `same` must be valid.
enum NcdStatus ncd_wta_same(const struct NcdWtaHasher *h,
                            const double *a,
                            const double *b,
                            size_t dim,
                            bool *same);

// # Safety
// `h` must come from this library or be null.
void ncd_wta_free(struct NcdWtaHasher *h);

// Minimum-cost assignment of an `n x n` row-major cost matrix.
// `perm[row]` receives the assigned column.
//
// # Safety
// `cost` must hold `n * n` values and `perm` room for `n`.
enum NcdStatus ncd_hungarian(const double *cost, size_t n, size_t *perm, double *total);

// Clustering accuracy of `n` predictions over `num_classes` classes.
//
// # Safety
// `y_true` and `y_pred` must hold `n` values; `acc` must be valid.
enum NcdStatus ncd_clustering_acc(const size_t *y_true,
                                  const size_t *y_pred,
                                  size_t n,
                                  size_t num_classes,
                                  double *acc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCD_H */
