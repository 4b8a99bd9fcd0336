#ifndef ADAMEMENTO_H
#define ADAMEMENTO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmStatus {
  AM_STATUS_OK = 0,
  AM_STATUS_NULL_POINTER = 1,
  AM_STATUS_INVALID_UTF8 = 2,
  AM_STATUS_CONFIG = 3,
  AM_STATUS_USAGE = 4,
  AM_STATUS_CONTRACT = 5,
  AM_STATUS_NUMERICAL = 6,
  AM_STATUS_COMPATIBILITY = 7,
  AM_STATUS_IO = 8,
  /**
   * The verification ran but at least one instance failed.
   */
  AM_STATUS_VERIFY_FAILED = 9,
  AM_STATUS_PANIC = 10,
} AmStatus;

/**
 * Run configuration holding the defaults until keys are set.
 */
typedef struct AmConfig AmConfig;

/**
 * One gridworld episode at a time.
 */
typedef struct AmEnv AmEnv;

typedef struct AmStep {
  uint32_t state;
  double reward;
  bool terminated;
  bool truncated;
  bool fell;
} AmStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *am_last_error(void);

/**
 * Library version as a static string.
 */
const char *am_version(void);

/**
 * Builds `name` (`cliff_walking`, `four_rooms`, `dark_chamber`). Zero
 * width or height keeps the layout's own size.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AmStatus am_env_new(const char *name, uint32_t width, uint32_t height, struct AmEnv **out);

/**
 * # Safety
 * `env` must come from [`am_env_new`] and not be used afterwards.
 */
void am_env_free(struct AmEnv *env);

/**
 * Number of cells, which is also the observation size.
 *
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum AmStatus am_env_n_cells(struct AmEnv *env, uint32_t *out);

/**
 * Starts a new episode and writes the start cell index.
 *
 * # Safety
 * `env` must be a live handle and `state` writable.
 */
enum AmStatus am_env_reset(struct AmEnv *env, uint32_t *state);

/**
 * Moves 0 up, 1 down, 2 left, 3 right. Stepping a finished episode is a
 * usage error.
 *
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum AmStatus am_env_step(struct AmEnv *env, uint32_t action, struct AmStep *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum AmStatus am_config_new(struct AmConfig **out);

/**
 * # Safety
 * `cfg` must come from [`am_config_new`] and not be used afterwards.
 */
void am_config_free(struct AmConfig *cfg);

/**
 * Sets one key, e.g. `NumEnv` to `8`. Unknown keys and bad values fail.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum AmStatus am_config_set(struct AmConfig *cfg, const char *key, const char *value);

/**
 * Trains under `cfg` and writes the run's files into `out_dir`.
 *
 * # Safety
 * `cfg` must be a live handle and `out_dir` a NUL-terminated path.
 */
enum AmStatus am_run(struct AmConfig *cfg, const char *out_dir);

/**
 * Checks theorem 1 (shaping invariance) or 2 (gated improvement) on
 * `count` random MDPs from `first_seed`, writing the failure count.
 * Returns `VerifyFailed` when it is non-zero.
 *
 * # Safety
 * `failures` must be writable.
 */
enum AmStatus am_verify(uint32_t theorem, uint64_t first_seed, uint64_t count, uint64_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAMEMENTO_H */
