#ifndef NIGHTS_H
#define NIGHTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdint.h>

/**
 * Outcome of a call.
 */
typedef enum {
  NIGHTS_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or malformed request JSON.
   */
  NIGHTS_STATUS_INVALID_ARGUMENT = 1,
  NIGHTS_STATUS_CONFIG = 2,
  NIGHTS_STATUS_WRONG_PHASE = 3,
  NIGHTS_STATUS_VALIDATION = 4,
  NIGHTS_STATUS_NOT_FOUND = 5,
  /**
   * Another call is mutating the same session; safe to retry.
   */
  NIGHTS_STATUS_BUSY = 6,
  NIGHTS_STATUS_CONTRACT = 7,
  NIGHTS_STATUS_BACKEND = 8,
  NIGHTS_STATUS_STORAGE = 9,
  NIGHTS_STATUS_PANIC = 10,
} NightsStatus;

/**
 * Opaque engine handle.
 */
typedef struct NightsEngine NightsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an engine from settings JSON (the same fields the server reads
 * from the environment). Null or `"{}"` gives the offline defaults.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is writable.
 */
NightsStatus nights_engine_new(const char *config_json, NightsEngine **out);

/**
 * # Safety
 * `engine` is null or came from [`nights_engine_new`] and is not used again.
 */
void nights_engine_free(NightsEngine *engine);

/**
 * Starts a session. `request_json` may be null or `{"seed":…,"persona":…}`.
 * Writes the session JSON to `out`.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_session_create(const NightsEngine *engine,
                                   const char *request_json,
                                   char **out);

/**
 * Writes the session JSON to `out`.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_session_get(const NightsEngine *engine, const char *session_id, char **out);

/**
 * Tells the next part of the story. Writes the turn outcome JSON to `out`.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_session_turn(const NightsEngine *engine,
                                 const char *session_id,
                                 const char *player_text,
                                 char **out);

/**
 * Plays one card in the battle. Writes the play JSON to `out`.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_session_play(const NightsEngine *engine,
                                 const char *session_id,
                                 const char *card_id,
                                 char **out);

/**
 * Seals the session (abandoning it if still in play) and writes the
 * storybook JSON to `out`. Repeated calls return the same storybook.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_session_close(const NightsEngine *engine, const char *session_id, char **out);

/**
 * Writes the Markdown storybook of a closed session to `out`.
 *
 * # Safety
 * Pointers are null or valid; `out` is writable.
 */
NightsStatus nights_storybook_markdown(const NightsEngine *engine,
                                       const char *session_id,
                                       char **out);

/**
 * Message for the last failed call on this thread, or null. Owned by the
 * library and valid until the next call on the same thread.
 */
const char *nights_last_error(void);

/**
 * Releases a string handed out by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or came from this library and is not used again.
 */
void nights_string_free(char *s);

/**
 * Library version, static.
 */
const char *nights_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIGHTS_H */
