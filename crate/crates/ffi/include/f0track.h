#ifndef F0TRACK_H
#define F0TRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum F0tStatus {
  F0T_STATUS_OK = 0,
  F0T_STATUS_NULL_POINTER = 1,
  F0T_STATUS_INVALID_UTF8 = 2,
  F0T_STATUS_IO = 3,
  F0T_STATUS_FORMAT = 4,
  F0T_STATUS_PARAMETER = 5,
  F0T_STATUS_DEGENERATE_INPUT = 6,
  F0T_STATUS_MODEL_MISMATCH = 7,
  F0T_STATUS_ALIGNMENT = 8,
  F0T_STATUS_OUT_OF_RANGE = 9,
  F0T_STATUS_INTERNAL = 10,
  F0T_STATUS_PANIC = 11,
} F0tStatus;

typedef enum F0tTrackerKind {
  F0T_TRACKER_KIND_DNN_REG = 0,
  F0T_TRACKER_KIND_RNN_REG = 1,
  F0T_TRACKER_KIND_DNN_HMM = 2,
} F0tTrackerKind;

// F0 contour; frame `i` sits at `offset_s + frame_index * hop_s`.
typedef struct F0tContour F0tContour;

// Loaded tracker model.
typedef struct F0tModel F0tModel;

typedef struct F0tFrame {
  size_t frame_index;
  // 0 when unvoiced.
  double f0_hz;
  uint8_t voiced;
} F0tFrame;

typedef struct F0tScore {
  size_t n_voiced;
  size_t n_gpe;
  size_t n_fpe;
  double gpe_rate;
  double fpe_mean_hz;
  double fpe_std_hz;
} F0tScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *f0t_last_error_message(void);

// Loads a model file written by `f0track train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum F0tStatus f0t_model_load(const char *path, struct F0tModel **out);

// # Safety
// `model` must be null or a handle from [`f0t_model_load`] not yet freed.
void f0t_model_free(struct F0tModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum F0tStatus f0t_model_kind(const struct F0tModel *model, enum F0tTrackerKind *out);

// Tracks `n` mono samples at `sample_rate_hz` with a loaded model.
//
// # Safety
// `model` must be a live handle, `samples` must hold `n` doubles and `out`
// must be writable.
enum F0tStatus f0t_track(const struct F0tModel *model,
                         const double *samples,
                         size_t n,
                         uint32_t sample_rate_hz,
                         struct F0tContour **out);

// Tracks with the YIN baseline on the default 25 ms / 5 ms grid, dropping
// `head_trim` and `tail_trim` frames.
//
// # Safety
// `samples` must hold `n` doubles and `out` must be writable.
enum F0tStatus f0t_yin_track(const double *samples,
                             size_t n,
                             uint32_t sample_rate_hz,
                             size_t head_trim,
                             size_t tail_trim,
                             struct F0tContour **out);

// Builds a contour from per-frame values; values `<= 0` are unvoiced.
//
// # Safety
// `values` must hold `n` doubles and `out` must be writable.
enum F0tStatus f0t_contour_from_values(const double *values,
                                       size_t n,
                                       double hop_s,
                                       double offset_s,
                                       struct F0tContour **out);

// # Safety
// `contour` must be null or a live handle not yet freed.
void f0t_contour_free(struct F0tContour *contour);

// Number of frames; 0 for a null handle.
//
// # Safety
// `contour` must be null or a live handle.
size_t f0t_contour_len(const struct F0tContour *contour);

// # Safety
// `contour` must be null or a live handle.
double f0t_contour_hop_s(const struct F0tContour *contour);

// # Safety
// `contour` must be null or a live handle.
double f0t_contour_offset_s(const struct F0tContour *contour);

// Frame at position `i`.
//
// # Safety
// `contour` must be a live handle and `out` writable.
enum F0tStatus f0t_contour_frame(const struct F0tContour *contour, size_t i, struct F0tFrame *out);

// Copies per-frame F0 (0 when unvoiced) into `out`, which must have room
// for `f0t_contour_len` values; `capacity` is checked.
//
// # Safety
// `contour` must be a live handle and `out` must hold `capacity` doubles.
enum F0tStatus f0t_contour_values(const struct F0tContour *contour, double *out, size_t capacity);

// Scores `est` against a reference on the same grid. A non-positive
// `gpe_threshold_s` selects the default of 0.625 ms.
//
// # Safety
// Both contours must be live handles and `out` writable.
enum F0tStatus f0t_score(const struct F0tContour *est,
                         const struct F0tContour *reference,
                         double gpe_threshold_s,
                         struct F0tScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* F0TRACK_H */
