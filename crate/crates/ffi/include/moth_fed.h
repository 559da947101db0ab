#ifndef MOTH_FED_H
#define MOTH_FED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MothError {
  MOTH_ERROR_OK = 0,
  MOTH_ERROR_NULL_ARGUMENT = 1,
  MOTH_ERROR_INVALID_UTF8 = 2,
  MOTH_ERROR_PARSE = 3,
  MOTH_ERROR_INVALID_NAME = 4,
  MOTH_ERROR_NAME_TAKEN = 5,
  MOTH_ERROR_NOT_FOUND = 6,
  MOTH_ERROR_STORAGE = 7,
  MOTH_ERROR_CONFIG = 8,
  MOTH_ERROR_PANIC = 99,
} MothError;

// Opaque server handle.
typedef struct MothServer MothServer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *moth_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library.
void moth_free_string(char *s);

// Parses a handle. Writes `{"username":..,"domain":..,"acct":..}`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum MothError moth_parse_acct(const char *text, const char *local_domain, char **out);

// Writes a JSON array of `user@domain` strings mentioned in `text`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum MothError moth_extract_mentions(const char *text, const char *local_domain, char **out);

// Writes a JSON array of lowercased hashtags found in `text`.
//
// # Safety
// `text` must be NUL-terminated; `out` must be writable.
enum MothError moth_extract_tags(const char *text, char **out);

// Creates a server from a JSON config document (same format as the CLI's
// config file).
//
// # Safety
// `config_json` must be NUL-terminated; `out` must be writable.
enum MothError moth_server_new(const char *config_json, struct MothServer **out);

// # Safety
// `server` must be null or a handle from [`moth_server_new`], freed once.
void moth_server_free(struct MothServer *server);

// Serves one request. `headers_json` is null or a JSON object of header
// names to values; `body` may be null. The HTTP status is written to
// `out_status` and the response body to `out_body`.
//
// # Safety
// `server` must be live; strings NUL-terminated; out pointers writable.
enum MothError moth_server_handle_request(const struct MothServer *server,
                                          const char *method,
                                          const char *target,
                                          const char *headers_json,
                                          const char *body,
                                          uint16_t *out_status,
                                          char **out_body);

// Provisions a local user and writes its bearer token to `out_token`.
//
// # Safety
// `server` must be live; `name` NUL-terminated; `out_token` writable.
enum MothError moth_user_create(const struct MothServer *server,
                                const char *name,
                                char **out_token);

// Runs one pass over due deliveries. Writes how many were delivered.
//
// # Safety
// `server` must be live; `out_delivered` null or writable.
enum MothError moth_process_queue(const struct MothServer *server, size_t *out_delivered);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTH_FED_H */
