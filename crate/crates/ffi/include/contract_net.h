#ifndef CONTRACT_NET_H
#define CONTRACT_NET_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum CnpStatus {
  CNP_STATUS_OK = 0,
  // A required pointer argument was null.
  CNP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CNP_STATUS_INVALID_UTF8 = 2,
  // Unknown key, malformed value or inconsistent configuration.
  CNP_STATUS_CONFIG = 3,
  // The run hit its tick limit before quiescing.
  CNP_STATUS_TIMEOUT = 4,
  // The run could not be set up or failed for another reason.
  CNP_STATUS_RUN = 5,
  // A trace could not be parsed.
  CNP_STATUS_PARSE = 6,
  // A panic was caught at the boundary.
  CNP_STATUS_PANIC = 7,
} CnpStatus;

// Opaque run configuration.
typedef struct CnpConfig CnpConfig;

// Opaque finished run.
typedef struct CnpRun CnpRun;

// Headline metrics of a finished run.
typedef struct CnpMetrics {
  uint64_t tasks_total;
  uint64_t tasks_updated;
  uint64_t task_repetitions;
  uint64_t message_count;
  uint64_t elapsed_ticks;
} CnpMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cnp_version(void);

// Message describing the last failure on this thread, or null if the last
// call succeeded. Valid until the next library call on this thread.
const char *cnp_last_error(void);

// New configuration holding the defaults.
struct CnpConfig *cnp_config_new(void);

// # Safety
// `config` must be null or a handle from [`cnp_config_new`] not yet freed.
void cnp_config_free(struct CnpConfig *config);

// Sets one option by name, e.g. `"seed"` / `"7"` or `"latency"` / `"2:1"`.
//
// # Safety
// `config` must be a live handle; `key` and `value` NUL-terminated strings.
enum CnpStatus cnp_config_set(struct CnpConfig *config, const char *key, const char *value);

// Applies `key=value` lines; `#` starts a comment.
//
// # Safety
// `config` must be a live handle; `text` a NUL-terminated string.
enum CnpStatus cnp_config_apply_text(struct CnpConfig *config, const char *text);

// Runs the configured experiment. On success `*out` receives a handle to
// release with [`cnp_run_free`]; on failure it is set to null.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum CnpStatus cnp_run(const struct CnpConfig *config, struct CnpRun **out);

// # Safety
// `run` must be null or a handle from [`cnp_run`] not yet freed.
void cnp_run_free(struct CnpRun *run);

// # Safety
// `run` must be a live handle and `out` a valid pointer.
enum CnpStatus cnp_run_metrics(const struct CnpRun *run, struct CnpMetrics *out);

// The run's trace, header line included. Release with [`cnp_string_free`].
// Returns null on failure.
//
// # Safety
// `run` must be a live handle.
char *cnp_run_trace(const struct CnpRun *run);

// Checks trace text against the protocol rules. `variant` and `dialect`
// may be null to take them from the trace header. The number of
// violations found is written to `*violations`.
//
// # Safety
// `text` must be a NUL-terminated string, `variant` and `dialect` null or
// NUL-terminated, and `violations` a valid pointer.
enum CnpStatus cnp_validate_trace(const char *text,
                                  const char *variant,
                                  const char *dialect,
                                  size_t *violations);

// Releases a string returned by the library.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void cnp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTRACT_NET_H */
