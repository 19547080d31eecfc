#ifndef RATIOBENCH_H
#define RATIOBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum RbStatus {
  RB_STATUS_OK = 0,
  RB_STATUS_NULL_POINTER = 1,
  RB_STATUS_INVALID_UTF8 = 2,
  RB_STATUS_CONFIG = 3,
  RB_STATUS_USAGE = 4,
  RB_STATUS_DIMENSION = 5,
  RB_STATUS_DOMAIN = 6,
  RB_STATUS_UNSUPPORTED = 7,
  /**
   * Non-finite values or a diverged training run.
   */
  RB_STATUS_NUMERIC = 8,
  RB_STATUS_IO = 9,
  /**
   * The command ran but some of its checks failed.
   */
  RB_STATUS_CHECKS_FAILED = 10,
  RB_STATUS_PANIC = 11,
} RbStatus;

/**
 * Parsed run configuration.
 */
typedef struct RbConfig RbConfig;

/**
 * Ratio network loaded from a checkpoint.
 */
typedef struct RbRatioNet RbRatioNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rb_version(void);

/**
 * Message of the last failed call on this thread, or `NULL` if the last
 * call succeeded. The pointer stays valid until the next call.
 */
const char *rb_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be `NULL` or a pointer obtained from this library that has not
 * been freed.
 */
void rb_string_free(char *s);

/**
 * Creates a configuration holding every default.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum RbStatus rb_config_default(struct RbConfig **out);

/**
 * Parses a `section.key = value` document.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbStatus rb_config_parse(const char *text, struct RbConfig **out);

/**
 * Writes the canonical text form of `cfg` to `*out`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum RbStatus rb_config_serialize(const struct RbConfig *cfg, char **out);

/**
 * Overrides the training seed, as the `--seed` flag does.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum RbStatus rb_config_set_seed(struct RbConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be `NULL` or a handle from this library that has not been freed.
 */
void rb_config_free(struct RbConfig *cfg);

/**
 * Loads a ratio network from checkpoint text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbStatus rb_ratio_net_load(const char *text, struct RbRatioNet **out);

/**
 * Input dimension of `net`.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum RbStatus rb_ratio_net_input_dim(const struct RbRatioNet *net, size_t *out);

/**
 * Evaluates `log r(x)` for each of the `rows` points in the row-major
 * `rows × cols` array `x`, writing `rows` values to `out`.
 *
 * # Safety
 * `net` must be a live handle, `x` must hold `rows * cols` values and `out`
 * must have room for `rows` values.
 */
enum RbStatus rb_ratio_net_log_ratio(const struct RbRatioNet *net,
                                     const double *x,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

/**
 * # Safety
 * `net` must be `NULL` or a handle from this library that has not been freed.
 */
void rb_ratio_net_free(struct RbRatioNet *net);

/**
 * Evaluates a ratio loss by its configuration name (`bernoulli`,
 * `fdiv:kl`, `lsif`, `bregman:squared`, ...). CPE rules read the inputs as
 * discriminator values in `[0, 1]`; every other loss reads them as ratios.
 * `pi` is the class balance and only affects CPE rules.
 *
 * # Safety
 * `name` must be NUL-terminated, the arrays must hold the stated number of
 * values, and `out` must be a valid pointer.
 */
enum RbStatus rb_ratio_loss(const char *name,
                            const double *real,
                            size_t n_real,
                            const double *gen,
                            size_t n_gen,
                            double pi,
                            double *out);

/**
 * Evaluates a generator loss by name on network outputs at generated
 * points, read as in [`rb_ratio_loss`]. Sample-based losses (`mmd`,
 * `moments:<k>`) return `RB_STATUS_UNSUPPORTED`.
 *
 * # Safety
 * `name` must be NUL-terminated, `gen` must hold `n_gen` values and `out`
 * must be a valid pointer.
 */
enum RbStatus rb_generator_loss(const char *name, const double *gen, size_t n_gen, double *out);

/**
 * One point of a loss-landscape curve: the value shifted to vanish at
 * `r = 1` and its derivative with respect to `log r`. `name` is an
 * f-divergence name, `minimax` or `nonsaturating`.
 *
 * # Safety
 * `name` must be NUL-terminated; `value` and `slope` must be valid pointers.
 */
enum RbStatus rb_curve(const char *name, double log_r, double *value, double *slope);

/**
 * Runs a CLI command (`train`, `estimate-ratio`, `curves`, `gradcheck`,
 * `benchmark`) writing into `out_dir`. Relative data paths resolve
 * against `base_dir`, or the working directory when it is `NULL`.
 * Returns `RB_STATUS_CHECKS_FAILED` when the command completes but reports
 * failing checks.
 *
 * # Safety
 * `command` and `out_dir` must be NUL-terminated, `base_dir` must be `NULL`
 * or NUL-terminated, and `cfg` must be a live handle.
 */
enum RbStatus rb_run_command(const char *command,
                             const struct RbConfig *cfg,
                             const char *base_dir,
                             const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATIOBENCH_H */
