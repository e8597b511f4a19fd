#ifndef GEOSEER_H
#define GEOSEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GsGranularity {
  GS_GRANULARITY_UNKNOWN = 0,
  GS_GRANULARITY_COUNTRY = 1,
  GS_GRANULARITY_STATE = 2,
  GS_GRANULARITY_CITY_TOWN = 3,
  GS_GRANULARITY_STREET = 4,
} GsGranularity;

typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_UTF8 = 2,
  GS_STATUS_INVALID_ARGUMENT = 3,
  GS_STATUS_PARSE_FAILED = 4,
  GS_STATUS_MEDIA_FAILED = 5,
  GS_STATUS_PANIC = 6,
} GsStatus;

/**
 * EXIF metadata summary.
 */
typedef struct GsExif GsExif;

/**
 * Parsed location guess.
 */
typedef struct GsGuess GsGuess;

/**
 * Byte buffer owned by the library. Release with [`gs_buffer_free`].
 */
typedef struct GsBuffer {
  uint8_t *data;
  size_t len;
} GsBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *gs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gs_version(void);

/**
 * Great-circle distance in statute miles.
 *
 * # Safety
 * `out` must be a valid pointer to a writable `double`.
 */
enum GsStatus gs_haversine_miles(double lat1, double lon1, double lat2, double lon2, double *out);

/**
 * Degrees/minutes/seconds to signed decimal degrees. `hemisphere` is one of
 * 'N', 'S', 'E', 'W' (either case).
 *
 * # Safety
 * `out` must be a valid pointer to a writable `double`.
 */
enum GsStatus gs_dms_to_decimal(double deg, double min, double sec, char hemisphere, double *out);

/**
 * Normalized form of a place name. Free the result with [`gs_string_free`].
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` a valid pointer.
 */
enum GsStatus gs_normalize_place_name(const char *name, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void gs_string_free(char *s);

/**
 * Parses model output into a guess handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum GsStatus gs_guess_parse(const char *text, struct GsGuess **out);

/**
 * # Safety
 * `guess` must be NULL or a handle from [`gs_guess_parse`], not yet freed.
 */
void gs_guess_free(struct GsGuess *guess);

/**
 * Finest populated admin level; `Unknown` for a NULL handle.
 *
 * # Safety
 * `guess` must be NULL or a live handle.
 */
enum GsGranularity gs_guess_granularity(const struct GsGuess *guess);

/**
 * Value at an admin level, or NULL when absent. Borrowed from the handle.
 *
 * # Safety
 * `guess` must be NULL or a live handle.
 */
const char *gs_guess_level(const struct GsGuess *guess, enum GsGranularity level);

/**
 * Place name, or NULL when absent. Borrowed from the handle.
 *
 * # Safety
 * `guess` must be NULL or a live handle.
 */
const char *gs_guess_place_name(const struct GsGuess *guess);

/**
 * Confidence in [0, 1]; 0 for a NULL handle.
 *
 * # Safety
 * `guess` must be NULL or a live handle.
 */
double gs_guess_confidence(const struct GsGuess *guess);

/**
 * Writes the guessed coordinates and returns true, or returns false if none.
 *
 * # Safety
 * `guess` must be NULL or a live handle; `lat`/`lon` valid pointers.
 */
bool gs_guess_coordinates(const struct GsGuess *guess, double *lat, double *lon);

/**
 * Canonical machine-readable block for the guess. Free with [`gs_string_free`].
 *
 * # Safety
 * `guess` must be a live handle; `out` a valid pointer.
 */
enum GsStatus gs_guess_render(const struct GsGuess *guess, char **out);

/**
 * Reads EXIF metadata from JPEG or TIFF bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` a valid pointer.
 */
enum GsStatus gs_exif_read(const uint8_t *data, size_t len, struct GsExif **out);

/**
 * # Safety
 * `exif` must be NULL or a handle from [`gs_exif_read`], not yet freed.
 */
void gs_exif_free(struct GsExif *exif);

/**
 * Writes usable GPS coordinates and returns true, or returns false if none.
 *
 * # Safety
 * `exif` must be NULL or a live handle; `lat`/`lon` valid pointers.
 */
bool gs_exif_gps(const struct GsExif *exif, double *lat, double *lon);

/**
 * True when a GPS IFD exists, even with unusable coordinates.
 *
 * # Safety
 * `exif` must be NULL or a live handle.
 */
bool gs_exif_has_gps_ifd(const struct GsExif *exif);

/**
 * Camera make, or NULL. Borrowed from the handle.
 *
 * # Safety
 * `exif` must be NULL or a live handle.
 */
const char *gs_exif_camera_make(const struct GsExif *exif);

/**
 * Camera model, or NULL. Borrowed from the handle.
 *
 * # Safety
 * `exif` must be NULL or a live handle.
 */
const char *gs_exif_camera_model(const struct GsExif *exif);

/**
 * Capture time as `YYYY-MM-DDTHH:MM:SS`, or NULL. Borrowed from the handle.
 *
 * # Safety
 * `exif` must be NULL or a live handle.
 */
const char *gs_exif_timestamp(const struct GsExif *exif);

/**
 * Copy of the image with GPS metadata removed. Free with [`gs_buffer_free`].
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` a valid pointer.
 */
enum GsStatus gs_strip_gps(const uint8_t *data, size_t len, struct GsBuffer *out);

/**
 * # Safety
 * `buf` must be NULL or point to a buffer filled by this library, not yet freed.
 */
void gs_buffer_free(struct GsBuffer *buf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOSEER_H */
