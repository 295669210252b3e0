#ifndef PAGENT_H
#define PAGENT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PagentStatus {
  PAGENT_STATUS_OK = 0,
  PAGENT_STATUS_NULL_ARGUMENT = 1,
  PAGENT_STATUS_INVALID_UTF8 = 2,
  PAGENT_STATUS_IO = 3,
  PAGENT_STATUS_PARSE = 4,
  PAGENT_STATUS_ANALYSIS = 5,
  PAGENT_STATUS_INTERNAL = 6,
} PagentStatus;

// Parsed and possibly linked IR program.
typedef struct PagentProgram PagentProgram;

// Vulnerability report produced by [`pagent_analyze`].
typedef struct PagentReport PagentReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into this library on the same thread.
const char *pagent_last_error_message(void);

// Library version as a static string.
const char *pagent_version(void);

// Parses textual IR.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum PagentStatus pagent_program_load(const char *text, struct PagentProgram **out);

// Reads and parses a `.ll` file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PagentStatus pagent_program_load_file(const char *path, struct PagentProgram **out);

// Links `count` programs into a new one; the inputs stay owned by the caller.
//
// # Safety
// `programs` must point to `count` valid handles and `out` must be valid.
enum PagentStatus pagent_program_link(const struct PagentProgram *const *programs,
                                      size_t count,
                                      struct PagentProgram **out);

// Number of functions (definitions and declarations); 0 for NULL.
//
// # Safety
// `program` must be NULL or a valid handle.
size_t pagent_program_function_count(const struct PagentProgram *program);

// # Safety
// `program` must be NULL or a handle not freed before.
void pagent_program_free(struct PagentProgram *program);

// Runs reachability and the builtin rules.
//
// `entrypoints` may be NULL when `entrypoint_count` is 0; harness and `main`
// functions are always added. `module_qualifier` may be NULL.
//
// # Safety
// All non-NULL pointers must be valid; `entrypoints` must hold
// `entrypoint_count` NUL-terminated strings.
enum PagentStatus pagent_analyze(const struct PagentProgram *program,
                                 const char *const *entrypoints,
                                 size_t entrypoint_count,
                                 const char *module_qualifier,
                                 struct PagentReport **out);

// Number of report entries; 0 for NULL.
//
// # Safety
// `report` must be NULL or a valid handle.
size_t pagent_report_len(const struct PagentReport *report);

// Serializes the report as JSON; free the result with [`pagent_string_free`].
//
// # Safety
// `report` must be a valid handle and `out` a valid pointer.
enum PagentStatus pagent_report_to_json(const struct PagentReport *report, char **out);

// # Safety
// `report` must be NULL or a handle not freed before.
void pagent_report_free(struct PagentReport *report);

// Canonical signature key of an IR function type such as `i1 (%struct.bfd*, i8*)`.
//
// # Safety
// `raw` must be a NUL-terminated string and `out` a valid pointer.
enum PagentStatus pagent_normalize_signature(const char *raw, char **out);

// Sanitizer name (`address`, `memory` or `undefined`) for a vulnerability
// type as a static string. NULL or non-UTF-8 input yields `address`.
//
// # Safety
// `vuln_type` must be NULL or a NUL-terminated string.
const char *pagent_assign_sanitizer(const char *vuln_type);

// # Safety
// `s` must be NULL or a string returned by this library and not freed before.
void pagent_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAGENT_H */
