#ifndef BLETRACK_H
#define BLETRACK_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BtStatus {
  BT_STATUS_OK = 0,
  BT_STATUS_NULL_POINTER = 1,
  BT_STATUS_INVALID_ARGUMENT = 2,
  BT_STATUS_MALFORMED_FRAME = 3,
  BT_STATUS_DSP = 4,
  BT_STATUS_GROUPING = 5,
  BT_STATUS_IO = 6,
  BT_STATUS_PANIC = 99,
} BtStatus;

/**
 * Packet grouping state: a device store plus grouping parameters.
 */
typedef struct BtEngine BtEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bt_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void bt_string_free(char *s);

/**
 * Decodes an advertising PDU (header, address, payload; no preamble,
 * access address or CRC) and writes a JSON description to `*out_json`.
 *
 * # Safety
 * `pdu` must point to `len` readable bytes and `out_json` to writable
 * storage for one pointer.
 */
enum BtStatus bt_decode_adv(const uint8_t *pdu, size_t len, uint8_t channel, char **out_json);

/**
 * Residual of `t - t_prev` (µs) against the 625 µs emission lattice.
 */
double bt_time_residual(int64_t t_us, int64_t t_prev_us);

/**
 * MUSIC angle of arrival, degrees from broadside, for a uniform linear
 * array. `iq` holds `antennas` planes of `samples` interleaved (I, Q)
 * pairs. `spacing_m <= 0` selects half-wavelength spacing.
 *
 * # Safety
 * `iq` must point to `2 * antennas * samples` doubles and `out_deg` to
 * one writable double.
 */
enum BtStatus bt_estimate_aoa(const double *iq,
                              size_t samples,
                              size_t antennas,
                              double sample_rate,
                              double center_freq,
                              double spacing_m,
                              double *out_deg);

/**
 * Creates a grouping engine for `nodes` sniffing nodes. `params` is a
 * key = value parameter text, or null for the defaults.
 *
 * # Safety
 * `params` must be null or a NUL-terminated string; `out` must point to
 * writable storage for one pointer.
 */
enum BtStatus bt_engine_new(size_t nodes, const char *params, struct BtEngine **out);

/**
 * # Safety
 * `engine` must be null or come from [`bt_engine_new`] and not have been
 * freed.
 */
void bt_engine_free(struct BtEngine *engine);

/**
 * Groups one packet, given as a JSON packet line (`ts_us`, `addr`,
 * `channel`, hex `pdu`, per-node `phy`). Packets must arrive in time
 * order. Writes the assigned device id to `*out_device` if non-null.
 *
 * # Safety
 * `engine` must be a live engine and `packet_json` a NUL-terminated
 * string.
 */
enum BtStatus bt_engine_ingest(struct BtEngine *engine,
                               const char *packet_json,
                               uint64_t *out_device);

/**
 * Number of devices the engine has created so far.
 *
 * # Safety
 * `engine` must be null or a live engine.
 */
size_t bt_engine_device_count(const struct BtEngine *engine);

/**
 * Writes the device store as JSON Lines to `path`.
 *
 * # Safety
 * `engine` must be a live engine and `path` a NUL-terminated string.
 */
enum BtStatus bt_engine_save(const struct BtEngine *engine, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLETRACK_H */
