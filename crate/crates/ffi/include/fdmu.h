#ifndef FDMU_H
#define FDMU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdmuStatus {
  FDMU_STATUS_OK = 0,
  FDMU_STATUS_NULL_POINTER = 1,
  FDMU_STATUS_INVALID_ARGUMENT = 2,
  FDMU_STATUS_UNKNOWN_DIVERGENCE = 3,
  FDMU_STATUS_DOMAIN = 4,
  FDMU_STATUS_UNSUPPORTED = 5,
  FDMU_STATUS_EXPLOSION = 6,
  FDMU_STATUS_NON_FINITE = 7,
  FDMU_STATUS_IO = 8,
  FDMU_STATUS_FORMAT = 9,
  FDMU_STATUS_DYNAMICS = 10,
  FDMU_STATUS_BUFFER_TOO_SMALL = 11,
  FDMU_STATUS_INTERNAL = 12,
} FdmuStatus;

// A scalar min-max game at its equilibrium.
typedef struct FdmuGame FdmuGame;

// A loaded denoiser checkpoint.
typedef struct FdmuModel FdmuModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message (empty after a success).
//
// # Safety
// `buf` must point to `len` writable bytes (or be null to query the size);
// `needed`, if non-null, receives the required size including the NUL.
enum FdmuStatus fdmu_last_error_message(char *buf, size_t len, size_t *needed);

// Library version as a static NUL-terminated string.
const char *fdmu_version(void);

// Closed-form divergence between `N(p_mean, p_var)` and `N(q_mean, q_var)`.
//
// # Safety
// `kind_name` must be a NUL-terminated string; `out` must be writable.
enum FdmuStatus fdmu_divergence_closed_form(const char *kind_name,
                                            double p_mean,
                                            double p_var,
                                            double q_mean,
                                            double q_var,
                                            double *out);

// Quadrature value of the same divergence.
//
// # Safety
// As for [`fdmu_divergence_closed_form`].
enum FdmuStatus fdmu_divergence_quadrature(const char *kind_name,
                                           double p_mean,
                                           double p_var,
                                           double q_mean,
                                           double q_var,
                                           double *out);

// `1 / f″(1)` for the named divergence.
//
// # Safety
// `kind_name` must be a NUL-terminated string; `out` must be writable.
enum FdmuStatus fdmu_speed_index(const char *kind_name, double *out);

// Loads a checkpoint file into a new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FdmuStatus fdmu_model_load(const char *path, struct FdmuModel **out);

// Writes the model to a checkpoint file.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum FdmuStatus fdmu_model_save(const struct FdmuModel *model, const char *path);

// Releases a model handle; null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void fdmu_model_free(struct FdmuModel *model);

// Number of concepts the model is conditioned on.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum FdmuStatus fdmu_model_concept_count(const struct FdmuModel *model, size_t *out);

// Hex SHA-256 of the model parameters.
//
// # Safety
// `model` must be a live handle; see [`fdmu_last_error_message`] for the
// buffer convention.
enum FdmuStatus fdmu_model_checksum(const struct FdmuModel *model,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

// Draws `n` samples for `concept` (a label or `"null"`) into `out_xy`
// as interleaved `x, y` pairs.
//
// # Safety
// `model` must be a live handle, `concept` a NUL-terminated string and
// `out_xy` must hold `2 * n` doubles.
enum FdmuStatus fdmu_model_sample(const struct FdmuModel *model,
                                  const char *concept,
                                  size_t n,
                                  uint64_t seed,
                                  double *out_xy);

// Per-concept classifier accuracy of `n` generated samples each.
//
// # Safety
// `model` must be a live handle; `out_accuracy` must hold `len` doubles,
// where `len` is at least the concept count.
enum FdmuStatus fdmu_model_evaluate(const struct FdmuModel *model,
                                    size_t n,
                                    uint64_t seed,
                                    double *out_accuracy,
                                    size_t len);

// Runs unlearning with a TOML configuration and returns a new handle.
//
// # Safety
// `model` must be a live handle, `config_toml` a NUL-terminated string
// (may be empty for defaults) and `out` writable.
enum FdmuStatus fdmu_unlearn(const struct FdmuModel *model,
                             const char *config_toml,
                             struct FdmuModel **out);

// Scalar game with target `N(mean, sd²)` for the named divergence.
//
// # Safety
// `kind_name` must be a NUL-terminated string; `out` writable.
enum FdmuStatus fdmu_game_new(const char *kind_name, double mean, double sd, struct FdmuGame **out);

// Releases a game handle; null is ignored.
//
// # Safety
// `game` must be null or a handle not yet freed.
void fdmu_game_free(struct FdmuGame *game);

// Equilibrium Jacobian eigenvalues, sorted by real part.
//
// # Safety
// `game` must be a live handle; `re` and `im` must hold `len` doubles;
// `count`, if non-null, receives the number of eigenvalues.
enum FdmuStatus fdmu_game_eigenvalues(const struct FdmuGame *game,
                                      double *re,
                                      double *im,
                                      size_t len,
                                      size_t *count);

// Full equilibrium report as JSON.
//
// # Safety
// `game` must be a live handle; see [`fdmu_last_error_message`] for the
// buffer convention.
enum FdmuStatus fdmu_game_report_json(const struct FdmuGame *game,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDMU_H */
