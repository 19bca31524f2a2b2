#ifndef GRAPHON_HAWKES_H
#define GRAPHON_HAWKES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 1 to 24 mirror the library error codes.
typedef enum GhStatus {
  GH_STATUS_OK = 0,
  GH_STATUS_INVALID_PARAMETER = 1,
  GH_STATUS_NEGATIVITY = 2,
  GH_STATUS_OUT_OF_DOMAIN = 3,
  GH_STATUS_NEGATIVE_TIME = 4,
  GH_STATUS_GRID_TOO_LARGE = 5,
  GH_STATUS_SHAPE = 6,
  GH_STATUS_NO_CONVERGENCE = 7,
  GH_STATUS_UNSTABLE_MODEL = 8,
  GH_STATUS_SLOW_CONVERGENCE = 9,
  GH_STATUS_EXPLOSION_GUARD = 10,
  GH_STATUS_REQUIRES_THINNING = 11,
  GH_STATUS_DEGENERATE_DENSITY = 12,
  GH_STATUS_NO_LIFETIMES = 13,
  GH_STATUS_ACAUSAL_HISTORY = 14,
  GH_STATUS_BAD_CELL_COUNT = 15,
  GH_STATUS_RESOLUTION_TOO_COARSE = 16,
  GH_STATUS_PRELIMIT_UNSTABLE = 17,
  GH_STATUS_DOMAIN_MISMATCH = 18,
  GH_STATUS_INVALID_ARGUMENT = 19,
  GH_STATUS_OUTDEGREE_CONDITION_FAILED = 20,
  GH_STATUS_ALL_CENSORED = 21,
  GH_STATUS_CONFIG = 22,
  GH_STATUS_IO = 23,
  GH_STATUS_INTERNAL = 24,
  GH_STATUS_NULL_POINTER = 100,
  GH_STATUS_INVALID_UTF8 = 101,
  GH_STATUS_PANIC = 102,
} GhStatus;

// Simulation method for [`gh_simulate`].
typedef enum GhMethod {
  GH_METHOD_CLUSTER = 0,
  GH_METHOD_THINNING = 1,
} GhMethod;

typedef struct GhKernel GhKernel;

typedef struct GhModel GhModel;

typedef struct GhRealization GhRealization;

// Scalar fields of one event. `parent_id` is -1 for immigrants and
// `lifetime` is NaN when the model has none.
typedef struct GhEvent {
  uint64_t id;
  double time;
  uint32_t generation;
  int64_t parent_id;
  double mark;
  double lifetime;
  size_t dim;
} GhEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *gh_last_error_message(void);

// Static kebab-case name of a status code.
const char *gh_status_str(enum GhStatus status);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void gh_string_free(char *s);

// Parses a TOML model description. Relative file references resolve
// against the working directory.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` writable.
enum GhStatus gh_model_from_toml(const char *toml, struct GhModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum GhStatus gh_model_from_file(const char *path, struct GhModel **out);

// # Safety
// `model` must come from `gh_model_from_*` and not have been freed.
void gh_model_free(struct GhModel *model);

// Dimension of the location space, 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t gh_model_dim(const struct GhModel *model);

// Runs the model checks. `*n_issues` gets the number of problems found and
// `*report` (if not NULL) a newline-separated description to release with
// [`gh_string_free`].
//
// # Safety
// `model` must be a live handle, `n_issues` writable, `report` NULL or writable.
enum GhStatus gh_model_validate(const struct GhModel *model, size_t *n_issues, char **report);

// Discretizes the offspring kernel on `n` nodes per axis (0 picks the
// model's default resolution).
//
// # Safety
// `model` must be a live handle and `out` writable.
enum GhStatus gh_kernel_new(const struct GhModel *model, size_t n, struct GhKernel **out);

// # Safety
// `kernel` must come from [`gh_kernel_new`] and not have been freed.
void gh_kernel_free(struct GhKernel *kernel);

// Number of quadrature nodes, 0 for NULL.
//
// # Safety
// `kernel` must be NULL or a live handle.
size_t gh_kernel_len(const struct GhKernel *kernel);

// L1 operator norm (largest column sum).
//
// # Safety
// `kernel` must be a live handle and `out` writable.
enum GhStatus gh_kernel_operator_norm(const struct GhKernel *kernel, double *out);

// # Safety
// `kernel` must be a live handle and `out` writable.
enum GhStatus gh_kernel_spectral_radius(const struct GhKernel *kernel, double *out);

// Total stationary intensity over the domain. Fails with
// `UnstableModel` when the spectral radius is not below one.
//
// # Safety
// `kernel` must be a live handle and `out` writable.
enum GhStatus gh_kernel_stationary_rate(const struct GhKernel *kernel, double *out);

// Simulates on `[0, horizon]` from an empty history.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum GhStatus gh_simulate(const struct GhModel *model,
                          double horizon,
                          uint64_t seed,
                          enum GhMethod method,
                          struct GhRealization **out);

// # Safety
// `real` must come from [`gh_simulate`] and not have been freed.
void gh_realization_free(struct GhRealization *real);

// Number of events, 0 for NULL.
//
// # Safety
// `real` must be NULL or a live handle.
size_t gh_realization_len(const struct GhRealization *real);

// Whether the event cap cut the run short.
//
// # Safety
// `real` must be NULL or a live handle.
bool gh_realization_truncated(const struct GhRealization *real);

// # Safety
// `real` must be a live handle and `out` writable.
enum GhStatus gh_realization_get(const struct GhRealization *real,
                                 size_t index,
                                 struct GhEvent *out);

// Copies the event location into `buf`, which must hold at least `len`
// values where `len` is the event dimension.
//
// # Safety
// `real` must be a live handle and `buf` valid for `len` writes.
enum GhStatus gh_realization_location(const struct GhRealization *real,
                                      size_t index,
                                      double *buf,
                                      size_t len);

// One JSON object per line. Release with [`gh_string_free`].
//
// # Safety
// `real` must be a live handle and `out` writable.
enum GhStatus gh_realization_to_ndjson(const struct GhRealization *real, char **out);

// Point-process distance between two realizations, matching events by
// shared tag (or id with equal time).
//
// # Safety
// All handles must be live and `out` writable.
enum GhStatus gh_distance(const struct GhModel *model_a,
                          const struct GhRealization *a,
                          const struct GhModel *model_b,
                          const struct GhRealization *b,
                          double *out);

// `E exp(-z Q_t)` where `Q_t` counts the events alive at time `t`, from an
// empty start. `z` must be nonnegative.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum GhStatus gh_transform_laplace(const struct GhModel *model, double z, double t, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHON_HAWKES_H */
