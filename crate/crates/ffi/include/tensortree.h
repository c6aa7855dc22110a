#ifndef TENSORTREE_H
#define TENSORTREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TtStatus {
  TT_STATUS_OK = 0,
  TT_STATUS_NULL_POINTER = 1,
  TT_STATUS_INVALID_ARGUMENT = 2,
  TT_STATUS_IO = 3,
  TT_STATUS_PARSE = 4,
  TT_STATUS_NUMERICAL = 5,
  TT_STATUS_PANIC = 6,
} TtStatus;

/**
 * Opaque model handle.
 */
typedef struct TtModel TtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *tt_last_error(void);

/**
 * Loads a model saved in the JSON network format.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum TtStatus tt_model_load(const char *path, struct TtModel **out);

/**
 * Parses a model from a JSON document.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum TtStatus tt_model_from_json(const char *json, struct TtModel **out);

/**
 * # Safety
 * `m` must be a live handle and `path` a nul-terminated string.
 */
enum TtStatus tt_model_save(const struct TtModel *m, const char *path);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void tt_model_free(struct TtModel *m);

/**
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum TtStatus tt_model_dim(const struct TtModel *m, uintptr_t *out);

/**
 * Number of stored coefficients.
 *
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum TtStatus tt_model_storage(const struct TtModel *m, uintptr_t *out);

/**
 * L² norm of the represented function.
 *
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum TtStatus tt_model_norm(const struct TtModel *m, double *out);

/**
 * Evaluates the model at `n` points stored row-major in `xs` (`n * d` values).
 *
 * # Safety
 * `xs` must hold `n * d` values and `out` room for `n`.
 */
enum TtStatus tt_model_evaluate(const struct TtModel *m,
                                const double *xs,
                                uintptr_t n,
                                uintptr_t d,
                                double *out);

/**
 * New model truncated at relative precision `eps`.
 *
 * # Safety
 * `m` must be a live handle and `out` a valid pointer.
 */
enum TtStatus tt_model_truncate(const struct TtModel *m, double eps, struct TtModel **out);

/**
 * Fits a model with rank and tree adaptation on `n` samples in `[-1, 1]^d`,
 * with Legendre features of the given degree. `config_json` may be null for
 * the default adaptation settings.
 *
 * # Safety
 * `xs` must hold `n * d` values, `ys` `n` values, `config_json` must be null or
 * nul-terminated, and `out` a valid pointer.
 */
enum TtStatus tt_fit(const double *xs,
                     const double *ys,
                     uintptr_t n,
                     uintptr_t d,
                     uintptr_t degree,
                     uint64_t seed,
                     const char *config_json,
                     struct TtModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENSORTREE_H */
