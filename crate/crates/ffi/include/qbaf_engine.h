#ifndef QBAF_ENGINE_H
#define QBAF_ENGINE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QeStatus {
  QE_STATUS_OK = 0,
  QE_STATUS_NULL_ARGUMENT = 1,
  QE_STATUS_INVALID_UTF8 = 2,
  QE_STATUS_PARSE = 3,
  QE_STATUS_INVALID = 4,
  QE_STATUS_DOMAIN = 5,
  QE_STATUS_NOT_FOUND = 6,
  QE_STATUS_REJECTED = 7,
  QE_STATUS_IO = 8,
  QE_STATUS_PANIC = 99,
} QeStatus;

typedef struct QeCondition QeCondition;

typedef struct QeQbaf QeQbaf;

typedef struct QeStore QeStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Owned by the
// library.
const char *qe_last_error_message(void);

// # Safety
// `s` must come from this library and not have been freed.
void qe_string_free(char *s);

// DF-QuAD combination of a base score with aggregated attack and support.
//
// # Safety
// `out` must be valid for writes.
enum QeStatus qe_df_quad_combine(double base, double attack, double support, double *out);

// Parse a framework from its JSON form and validate it.
//
// # Safety
// `json_text` must be a NUL-terminated string; `out` must be valid for writes.
enum QeStatus qe_qbaf_from_json(const char *json_text, struct QeQbaf **out);

// # Safety
// `qbaf` must be a live handle; `out` must be valid for writes.
enum QeStatus qe_qbaf_root_strength(const struct QeQbaf *qbaf, double *out);

// # Safety
// `qbaf` must be a live handle, `argument` a NUL-terminated string and `out`
// valid for writes.
enum QeStatus qe_qbaf_strength(const struct QeQbaf *qbaf, const char *argument, double *out);

// # Safety
// `qbaf` must be null or a handle not yet freed.
void qe_qbaf_free(struct QeQbaf *qbaf);

// Parse an applicability condition.
//
// # Safety
// `json_text` must be a NUL-terminated string; `out` must be valid for writes.
enum QeStatus qe_condition_parse(const char *json_text, struct QeCondition **out);

// Evaluate a condition against case parameters given as a JSON object.
//
// # Safety
// `cond` must be a live handle, `params_json` a NUL-terminated string and
// `out` valid for writes.
enum QeStatus qe_condition_eval(const struct QeCondition *cond, const char *params_json, bool *out);

// # Safety
// `cond` must be null or a handle not yet freed.
void qe_condition_free(struct QeCondition *cond);

// Open an existing artifact store directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum QeStatus qe_store_open(const char *path, struct QeStore **out);

// # Safety
// `store` must be a live handle; `out` must be valid for writes.
enum QeStatus qe_store_revision(const struct QeStore *store, uint64_t *out);

// Score every option for explicit case parameters. Writes a JSON document
// `{"revision", "params", "results", "failures"}` with results ranked; free
// it with [`qe_string_free`].
//
// # Safety
// `store` must be a live handle, `params_json` a NUL-terminated string and
// `out_json` valid for writes.
enum QeStatus qe_store_infer(const struct QeStore *store, const char *params_json, char **out_json);

// Apply a contestation and append it to the store's log.
//
// # Safety
// `store` must be a live handle not used concurrently, `edit_json` and
// `justification` NUL-terminated strings and `out_revision` valid for writes.
enum QeStatus qe_store_contest(struct QeStore *store,
                               const char *edit_json,
                               const char *justification,
                               uint64_t *out_revision);

// # Safety
// `store` must be null or a handle not yet freed.
void qe_store_free(struct QeStore *store);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QBAF_ENGINE_H */
