#ifndef FLOWALIGN_H
#define FLOWALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every function.
 */
typedef enum FaStatus {
  FA_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  FA_STATUS_NULL_ARGUMENT = 1,
  /*
   An argument or configuration value is out of range.
   */
  FA_STATUS_INVALID_ARGUMENT = 2,
  /*
   A file could not be read or written.
   */
  FA_STATUS_IO = 3,
  /*
   Input data (dataset, checkpoint, capture) is malformed.
   */
  FA_STATUS_DATA = 4,
  /*
   Shape or layout mismatch between objects.
   */
  FA_STATUS_SHAPE = 5,
  /*
   A computation produced a non-finite value.
   */
  FA_STATUS_NUMERIC = 6,
  /*
   The caller's buffer is too small.
   */
  FA_STATUS_BUFFER_TOO_SMALL = 7,
  /*
   An internal panic was caught.
   */
  FA_STATUS_PANIC = 8,
} FaStatus;

/*
 What a tracker observation did.
 */
typedef enum FaTrackerEvent {
  FA_TRACKER_EVENT_NONE = 0,
  FA_TRACKER_EVENT_CONVERGED = 1,
  FA_TRACKER_EVENT_MERGED = 2,
  FA_TRACKER_EVENT_STOP = 3,
} FaTrackerEvent;

typedef struct FaDataset FaDataset;

/*
 Model parameters together with their architecture.
 */
typedef struct FaModel FaModel;

typedef struct FaTracker FaTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length without the NUL,
 or 0 when no error has been recorded.

 # Safety
 `buf` must be valid for `len` bytes or null.
 */
size_t fa_last_error_message(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *fa_version(void);

/*
 Creates a freshly initialized model for the standard flow features.

 # Safety
 `out` must be a valid pointer to writable storage.
 */
enum FaStatus fa_model_new(size_t hidden_width,
                           size_t repr_dim,
                           size_t num_classes,
                           uint64_t seed,
                           struct FaModel **out);

/*
 Loads a checkpoint written for the given architecture.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FaStatus fa_model_load(const char *path,
                            size_t hidden_width,
                            size_t repr_dim,
                            size_t num_classes,
                            struct FaModel **out);

/*
 # Safety
 `model` must come from this library; `path` must be NUL-terminated.
 */
enum FaStatus fa_model_save(const struct FaModel *model, const char *path);

/*
 Number of parameters; 0 for a null model.

 # Safety
 `model` must come from this library or be null.
 */
size_t fa_model_param_count(const struct FaModel *model);

/*
 Copies the parameters into `buf`, which must hold exactly
 `fa_model_param_count` values.

 # Safety
 `buf` must be valid for `len` doubles.
 */
enum FaStatus fa_model_get_params(const struct FaModel *model, double *buf, size_t len);

/*
 Replaces the parameters; values must be finite.

 # Safety
 `values` must be valid for `len` doubles.
 */
enum FaStatus fa_model_set_params(struct FaModel *model, const double *values, size_t len);

/*
 Predicts a class for every sample of `dataset` in domain order. `preds`
 must hold `fa_dataset_len` entries.

 # Safety
 Pointers must come from this library; `preds` must be valid for `len`.
 */
enum FaStatus fa_model_predict(const struct FaModel *model,
                               const struct FaDataset *dataset,
                               size_t *preds,
                               size_t len);

/*
 # Safety
 `model` must come from this library or be null; it is invalid afterwards.
 */
void fa_model_free(struct FaModel *model);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum FaStatus fa_dataset_load(const char *path, struct FaDataset **out);

/*
 Generates a synthetic shifted dataset.

 # Safety
 `out` must be writable.
 */
enum FaStatus fa_dataset_generate(size_t num_classes,
                                  size_t num_domains,
                                  size_t per_class_domain,
                                  double magnitude,
                                  uint64_t seed,
                                  struct FaDataset **out);

/*
 # Safety
 `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum FaStatus fa_dataset_save(const struct FaDataset *dataset, const char *path);

/*
 Total samples; 0 for null.

 # Safety
 `dataset` must come from this library or be null.
 */
size_t fa_dataset_len(const struct FaDataset *dataset);

/*
 # Safety
 `dataset` must come from this library or be null.
 */
size_t fa_dataset_num_domains(const struct FaDataset *dataset);

/*
 # Safety
 `dataset` must come from this library or be null.
 */
size_t fa_dataset_num_classes(const struct FaDataset *dataset);

/*
 # Safety
 `dataset` must come from this library or be null; it is invalid afterwards.
 */
void fa_dataset_free(struct FaDataset *dataset);

/*
 Creates an online valley tracker.

 # Safety
 `out` must be writable.
 */
enum FaStatus fa_tracker_new(size_t converge_patience,
                             size_t overfit_patience,
                             double tolerance,
                             double temperature,
                             size_t max_epochs,
                             struct FaTracker **out);

/*
 Feeds the model state after 1-based `epoch` with its validation loss.

 # Safety
 Pointers must come from this library; `event` may be null.
 */
enum FaStatus fa_tracker_observe(struct FaTracker *tracker,
                                 size_t epoch,
                                 const struct FaModel *model,
                                 double val_loss,
                                 enum FaTrackerEvent *event);

/*
 Detected convergence epoch, or 0 while none.

 # Safety
 `tracker` must come from this library or be null.
 */
size_t fa_tracker_converge_epoch(const struct FaTracker *tracker);

/*
 Number of checkpoints merged so far.

 # Safety
 `tracker` must come from this library or be null.
 */
size_t fa_tracker_merged_count(const struct FaTracker *tracker);

/*
 Writes the merged parameters into `model` (same architecture).

 # Safety
 Pointers must come from this library.
 */
enum FaStatus fa_tracker_merged_into(const struct FaTracker *tracker, struct FaModel *model);

/*
 # Safety
 `tracker` must come from this library or be null; it is invalid afterwards.
 */
void fa_tracker_free(struct FaTracker *tracker);

/*
 Top-1 accuracy, one-vs-rest accuracy and weighted F1. Any output pointer
 may be null.

 # Safety
 `predictions` and `labels` must be valid for `n` entries.
 */
enum FaStatus fa_metrics(const size_t *predictions,
                         const size_t *labels,
                         size_t n,
                         size_t num_classes,
                         double *accuracy,
                         double *literal_accuracy,
                         double *weighted_f1);

/*
 Runs the cross-domain experiment described by a TOML configuration and
 returns the JSON report in `*report_json`; release it with
 [`fa_string_free`].

 # Safety
 `config_toml` must be NUL-terminated (may be empty); `report_json` writable.
 */
enum FaStatus fa_experiment_run(const char *config_toml,
                                const struct FaDataset *dataset,
                                char **report_json);

/*
 Frees a string returned by this library.

 # Safety
 `s` must come from this library or be null.
 */
void fa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWALIGN_H */
