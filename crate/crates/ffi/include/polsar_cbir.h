#ifndef POLSAR_CBIR_H
#define POLSAR_CBIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PolsarStatus {
  POLSAR_STATUS_OK = 0,
  POLSAR_STATUS_NULL_ARGUMENT = 1,
  POLSAR_STATUS_INVALID_UTF8 = 2,
  POLSAR_STATUS_INVALID_INPUT = 3,
  POLSAR_STATUS_NOT_FOUND = 4,
  POLSAR_STATUS_EMPTY_ARCHIVE = 5,
  POLSAR_STATUS_UNAVAILABLE = 6,
  POLSAR_STATUS_FORMAT = 7,
  POLSAR_STATUS_IO = 8,
  POLSAR_STATUS_OUT_OF_RANGE = 9,
  POLSAR_STATUS_INTERNAL = 10,
} PolsarStatus;

// Loaded index handle.
typedef struct PolsarIndex PolsarIndex;

// Query result handle.
typedef struct PolsarResults PolsarResults;

// Descriptor store handle.
typedef struct PolsarStore PolsarStore;

typedef struct PolsarIndexInfo {
  size_t nodes;
  size_t leaves;
  size_t height;
  size_t dim;
  uint64_t total_points;
} PolsarIndexInfo;

typedef struct PolsarHit {
  // Owned by the results handle.
  const char *tile_id;
  double distance_sq;
  double min_lat;
  double min_lon;
  double max_lat;
  double max_lon;
} PolsarHit;

typedef struct PolsarDecomposition {
  double entropy;
  // Mean alpha angle in radians.
  double alpha;
  double anisotropy;
  double probabilities[3];
} PolsarDecomposition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call on the same thread.
const char *polsar_last_error(void);

// Opens (or creates) a store directory with the default layout.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PolsarStatus polsar_store_open(const char *path, struct PolsarStore **out);

// # Safety
// `store` must come from [`polsar_store_open`] or be null.
void polsar_store_free(struct PolsarStore *store);

// # Safety
// `store` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_store_len(const struct PolsarStore *store, size_t *out);

// Builds an index over the whole store. Zero `n_min` or `h_max` keeps
// the default.
//
// # Safety
// `store` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_index_build(const struct PolsarStore *store,
                                     size_t n_min,
                                     size_t h_max,
                                     struct PolsarIndex **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PolsarStatus polsar_index_load(const char *path, struct PolsarIndex **out);

// # Safety
// `index` must be a live handle; `path` a NUL-terminated string.
enum PolsarStatus polsar_index_save(const struct PolsarIndex *index, const char *path);

// # Safety
// `index` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_index_info(const struct PolsarIndex *index, struct PolsarIndexInfo *out);

// # Safety
// `index` must come from this library or be null.
void polsar_index_free(struct PolsarIndex *index);

// Query with the stored descriptor of `tile_id`.
//
// # Safety
// Handles must be live; `tile_id` NUL-terminated; `out` writable.
enum PolsarStatus polsar_query_tile_id(const struct PolsarIndex *index,
                                       const struct PolsarStore *store,
                                       const char *tile_id,
                                       size_t top_k,
                                       struct PolsarResults **out);

// Query with a sparse descriptor given as `nnz` strictly increasing bin
// indices and their values.
//
// # Safety
// Handles must be live; `indices` and `values` must hold `nnz` elements.
enum PolsarStatus polsar_query_vector(const struct PolsarIndex *index,
                                      const struct PolsarStore *store,
                                      size_t dim,
                                      const uint32_t *indices,
                                      const float *values,
                                      size_t nnz,
                                      size_t top_k,
                                      struct PolsarResults **out);

// # Safety
// `results` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_results_len(const struct PolsarResults *results, size_t *out);

// Distance evaluations spent by the query.
//
// # Safety
// `results` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_results_distance_evals(const struct PolsarResults *results, uint64_t *out);

// Hit `i` in rank order. The tile id pointer lives as long as `results`.
//
// # Safety
// `results` must be a live handle; `out` must be writable.
enum PolsarStatus polsar_results_get(const struct PolsarResults *results,
                                     size_t i,
                                     struct PolsarHit *out);

// # Safety
// `results` must come from this library or be null.
void polsar_results_free(struct PolsarResults *results);

// H/alpha/A of a 3x3 coherency matrix given row-major as 9 complex
// entries, interleaved real and imaginary parts (18 doubles).
//
// # Safety
// `matrix` must hold 18 doubles; `out` must be writable.
enum PolsarStatus polsar_decompose(const double *matrix, struct PolsarDecomposition *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLSAR_CBIR_H */
