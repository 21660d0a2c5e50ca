#ifndef DWNET_H
#define DWNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DwnetStatus {
  DWNET_STATUS_OK = 0,
  DWNET_STATUS_NULL_POINTER = 1,
  DWNET_STATUS_INVALID_ARGUMENT = 2,
  DWNET_STATUS_IO = 3,
  DWNET_STATUS_MODEL = 4,
  DWNET_STATUS_BUFFER_TOO_SMALL = 5,
  DWNET_STATUS_PANIC = 6,
} DwnetStatus;

// A dataset read from a JSON-lines file.
typedef struct DwnetDataset DwnetDataset;

// A loaded checkpoint.
typedef struct DwnetModel DwnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty after a
// success. Valid until the next call into this library on the same thread.
const char *dwnet_last_error(void);

// Library version as a static NUL-terminated string.
const char *dwnet_version(void);

// Loads a checkpoint written by `dwnet train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DwnetStatus dwnet_model_load(const char *path, struct DwnetModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`dwnet_model_load`] and not be used afterwards.
void dwnet_model_free(struct DwnetModel *model);

// 0 when the model predicts delay, 1 for jitter, -1 for a null model.
//
// # Safety
// `model` must be null or a live handle.
int32_t dwnet_model_target(const struct DwnetModel *model);

// Reads a dataset file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DwnetStatus dwnet_dataset_read(const char *path, struct DwnetDataset **out);

// Releases a dataset. Null is ignored.
//
// # Safety
// `dataset` must come from [`dwnet_dataset_read`] and not be used afterwards.
void dwnet_dataset_free(struct DwnetDataset *dataset);

// Number of samples; 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t dwnet_dataset_len(const struct DwnetDataset *dataset);

// Number of paths in sample `index`.
//
// # Safety
// `dataset` must be a live handle and `out` writable.
enum DwnetStatus dwnet_dataset_path_count(const struct DwnetDataset *dataset,
                                          size_t index,
                                          size_t *out);

// Writes the eval-mode prediction of every path of sample `index` into
// `out` (capacity `out_len`) and the path count into `written`. Returns
// `BufferTooSmall` with `written` set when `out_len` is insufficient.
//
// # Safety
// Handles must be live; `out` must hold `out_len` doubles; `written`
// must be writable.
enum DwnetStatus dwnet_predict_sample(const struct DwnetModel *model,
                                      const struct DwnetDataset *dataset,
                                      size_t index,
                                      double *out,
                                      size_t out_len,
                                      size_t *written);

// Predicts from raw arrays. Link `i` goes from `link_src[i]` to
// `link_dst[i]` with capacity `capacity[i]`. Path `p` uses links
// `path_links[path_offsets[p] .. path_offsets[p + 1]]` in order and
// carries `demand[p]`. `path_offsets` has `n_paths + 1` entries and `out`
// receives `n_paths` predictions.
//
// # Safety
// Every array must hold the number of elements described above.
enum DwnetStatus dwnet_predict_raw(const struct DwnetModel *model,
                                   size_t node_count,
                                   size_t n_links,
                                   const size_t *link_src,
                                   const size_t *link_dst,
                                   const double *capacity,
                                   size_t n_paths,
                                   const size_t *path_offsets,
                                   const size_t *path_links,
                                   const double *demand,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWNET_H */
