#ifndef HOLORELAY_H
#define HOLORELAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  HR_STATUS_NULL_POINTER = 1,
  HR_STATUS_INVALID_ARGUMENT = 2,
  HR_STATUS_BUFFER_TOO_SMALL = 3,
  // Bytes are not a well-formed wire message of the expected type.
  HR_STATUS_WIRE = 4,
  // Depth encode or decode failed for a reason other than desync.
  HR_STATUS_CODEC = 5,
  // The delta does not apply to the decoder's reference; request a keyframe.
  HR_STATUS_DESYNC = 6,
  // The annotation op was rejected (duplicate or out of protocol).
  HR_STATUS_ANNOTATION = 7,
  HR_STATUS_SIMULATION = 8,
  HR_STATUS_PANIC = 9,
} HrStatus;

// The shared annotation state one peer holds.
typedef struct HrAnnotations HrAnnotations;

// Decoder state plus the last frame it reconstructed.
typedef struct HrDepthDecoder HrDepthDecoder;

// Encoder state: configuration plus the reconstructed reference.
typedef struct HrDepthEncoder HrDepthEncoder;

// A configured session; runs once.
typedef struct HrSimulation HrSimulation;

// A byte buffer owned by the library.
typedef struct HrBuffer {
  uint8_t *data;
  size_t len;
} HrBuffer;

// Camera model of the frames passed to the encoder.
typedef struct HrIntrinsics {
  float fx;
  float fy;
  float cx;
  float cy;
  uint16_t width;
  uint16_t height;
} HrIntrinsics;

// Identity of a decoded frame.
typedef struct HrFrameInfo {
  uint32_t frame_id;
  uint64_t capture_ts_us;
  uint16_t width;
  uint16_t height;
  bool keyframe;
} HrFrameInfo;

// Parameters of a simulated session over the synthetic scene.
typedef struct HrSimulationParams {
  uint16_t width;
  uint16_t height;
  uint64_t duration_us;
  double latency_ms;
  double jitter_ms;
  double loss_probability;
  // 0 for an unlimited link.
  uint64_t bandwidth_bps;
  // 0 for an unbounded media queue.
  uint32_t queue_capacity;
  uint64_t seed;
} HrSimulationParams;

// Headline numbers of a finished run. Latencies are NaN when no frame
// arrived.
typedef struct HrSimulationReport {
  uint64_t end_us;
  uint64_t frames_captured;
  uint64_t reconstructed_frames;
  uint64_t queue_drops;
  uint64_t network_losses;
  uint64_t keyframes_sent;
  uint64_t keyframe_requests;
  uint64_t operator_bytes_tx;
  double e2e_p50_ms;
  double e2e_p95_ms;
  bool annotations_converged;
} HrSimulationReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next library call on the same thread.
const char *hr_last_error_message(void);

// Releases a buffer returned by the library. Safe to call on an empty buffer.
//
// # Safety
// `buffer` must be NULL or point to a buffer filled by this library that
// has not been freed yet.
void hr_buffer_free(struct HrBuffer *buffer);

// Creates an encoder. Pass 0 for any argument to take its default
// (tile 16, threshold 10 mm, keyframe every 30 frames); a threshold of 0
// must therefore be requested through `exact`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HrStatus hr_depth_encoder_new(uint8_t tile_size,
                                   uint16_t threshold_mm,
                                   uint32_t keyframe_interval,
                                   bool exact,
                                   struct HrDepthEncoder **out);

// Encodes one depth frame (`width * height` row-major millimeters, 0 =
// invalid) into a serialized wire message: a keyframe or a tile delta.
//
// # Safety
// `encoder` must come from [`hr_depth_encoder_new`]; `depth` must point to
// `width * height` values; `out` must be writable. The buffer written to
// `out` must be released with [`hr_buffer_free`].
enum HrStatus hr_depth_encoder_encode(struct HrDepthEncoder *encoder,
                                      uint32_t frame_id,
                                      uint64_t capture_ts_us,
                                      struct HrIntrinsics intrinsics,
                                      const uint16_t *depth,
                                      struct HrBuffer *out);

// Makes the next encoded frame a keyframe.
//
// # Safety
// `encoder` must come from [`hr_depth_encoder_new`].
enum HrStatus hr_depth_encoder_force_keyframe(struct HrDepthEncoder *encoder);

// # Safety
// `encoder` must be NULL or come from [`hr_depth_encoder_new`] and not be
// used afterwards.
void hr_depth_encoder_free(struct HrDepthEncoder *encoder);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HrStatus hr_depth_decoder_new(struct HrDepthDecoder **out);

// Decodes one serialized depth message. On success `info` describes the
// reconstructed frame, whose pixels [`hr_depth_decoder_copy_depth`] copies
// out. `HR_STATUS_DESYNC` means a keyframe is needed before deltas apply.
//
// # Safety
// `decoder` must come from [`hr_depth_decoder_new`]; `bytes` must point to
// `len` readable bytes; `info` must be NULL or writable.
enum HrStatus hr_depth_decoder_decode(struct HrDepthDecoder *decoder,
                                      const uint8_t *bytes,
                                      size_t len,
                                      struct HrFrameInfo *info);

// Copies the last decoded frame into `out`, which holds `capacity` values.
//
// # Safety
// `decoder` must come from [`hr_depth_decoder_new`]; `out` must point to
// `capacity` writable values.
enum HrStatus hr_depth_decoder_copy_depth(const struct HrDepthDecoder *decoder,
                                          uint16_t *out,
                                          size_t capacity);

// # Safety
// `decoder` must be NULL or come from [`hr_depth_decoder_new`] and not be
// used afterwards.
void hr_depth_decoder_free(struct HrDepthDecoder *decoder);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HrStatus hr_annotations_new(struct HrAnnotations **out);

// Applies one serialized AnnotationOp wire message. `superseded` (may be
// NULL) is set when the op targeted a stroke already erased or cleared.
//
// # Safety
// `annotations` must come from [`hr_annotations_new`]; `bytes` must point to
// `len` readable bytes.
enum HrStatus hr_annotations_apply(struct HrAnnotations *annotations,
                                   const uint8_t *bytes,
                                   size_t len,
                                   bool *superseded);

// Number of live strokes, or 0 for a NULL handle.
//
// # Safety
// `annotations` must be NULL or come from [`hr_annotations_new`].
size_t hr_annotations_stroke_count(const struct HrAnnotations *annotations);

// Writes the state as UTF-8 JSON (not NUL-terminated) into `out`.
//
// # Safety
// `annotations` must come from [`hr_annotations_new`]; `out` must be
// writable. Release the buffer with [`hr_buffer_free`].
enum HrStatus hr_annotations_to_json(const struct HrAnnotations *annotations, struct HrBuffer *out);

// # Safety
// `annotations` must be NULL or come from [`hr_annotations_new`] and not be
// used afterwards.
void hr_annotations_free(struct HrAnnotations *annotations);

// Defaults for [`HrSimulationParams`]: 640x576, 10 s, 80 ms ± 20 ms, 0.5 %
// loss, 20 Mbps, two-slot queue, seed 7.
struct HrSimulationParams hr_simulation_params_default(void);

// # Safety
// `params` must be readable and `out` writable.
enum HrStatus hr_simulation_new(const struct HrSimulationParams *params, struct HrSimulation **out);

// Runs the session to completion and fills `report` (may be NULL). A
// second call returns the first run's report without running again.
//
// # Safety
// `sim` must come from [`hr_simulation_new`]; `report` must be NULL or
// writable.
enum HrStatus hr_simulation_run(struct HrSimulation *sim, struct HrSimulationReport *report);

// The per-second stats of a finished run as JSON lines.
//
// # Safety
// `sim` must come from [`hr_simulation_new`]; `out` must be writable.
enum HrStatus hr_simulation_stats_jsonl(const struct HrSimulation *sim, struct HrBuffer *out);

// # Safety
// `sim` must be NULL or come from [`hr_simulation_new`] and not be used
// afterwards.
void hr_simulation_free(struct HrSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLORELAY_H */
