#ifndef SCREENGAZE_H
#define SCREENGAZE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  // Ray parallel to the screen or a zero-length direction.
  SG_STATUS_GEOMETRY = 3,
  // Not enough usable data to calibrate.
  SG_STATUS_INSUFFICIENT_DATA = 4,
  SG_STATUS_IO = 5,
  // Malformed CSV or JSON input.
  SG_STATUS_SCHEMA = 6,
  // Training diverged or every sample failed to project.
  SG_STATUS_TRAINING = 7,
  // The handle has no calibration yet.
  SG_STATUS_NOT_CALIBRATED = 8,
  SG_STATUS_PANIC = 9,
} SgStatus;

// Opaque calibration session.
typedef struct SgCalibrator SgCalibrator;

// Screen pose: rotation vector `r` (radians) and translation `t` (mm).
typedef struct SgPose {
  double r[3];
  double t[3];
} SgPose;

typedef struct SgAdapter {
  double delta[3];
  double bias[3];
} SgAdapter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *sg_last_error(void);

// Rotation matrix of the rotation vector `r`, row-major into `out[9]`.
//
// # Safety
// `r` must point to 3 doubles and `out` to 9.
enum SgStatus sg_rodrigues(const double *r, double *out);

// Screen point (mm) hit by gaze `g` from origin `o`.
//
// # Safety
// `g` and `o` must point to 3 doubles, `out_uv` to 2.
enum SgStatus sg_project(const struct SgPose *pose,
                         const double *g,
                         const double *o,
                         double *out_uv);

// Unit gaze direction from `o` toward the screen point `uv`.
//
// # Safety
// `uv` must point to 2 doubles, `o` and `out_g` to 3.
enum SgStatus sg_inverse_project(const struct SgPose *pose,
                                 const double *uv,
                                 const double *o,
                                 double *out_g);

// Creates a calibration session. `config_json` may be null for defaults;
// omitted fields take their defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be valid.
enum SgStatus sg_calibrator_new(const char *config_json, struct SgCalibrator **out);

// # Safety
// `handle` must be null or come from [`sg_calibrator_new`], and not be used
// afterwards.
void sg_calibrator_free(struct SgCalibrator *handle);

// Loads a sample CSV, replacing any earlier data and calibration.
//
// # Safety
// `handle` must be valid; `path` NUL-terminated.
enum SgStatus sg_calibrator_load_csv(struct SgCalibrator *handle, const char *path);

// Calibrates every subject of the loaded data.
//
// # Safety
// `handle` must be valid.
enum SgStatus sg_calibrator_run(struct SgCalibrator *handle);

// Number of calibrated subjects.
//
// # Safety
// `handle` and `out_count` must be valid.
enum SgStatus sg_calibrator_subject_count(const struct SgCalibrator *handle, uintptr_t *out_count);

// Learned pose and adapter of the `index`-th subject.
//
// # Safety
// `handle` must be valid; each output pointer must be valid or null.
enum SgStatus sg_calibrator_result(const struct SgCalibrator *handle,
                                   uintptr_t index,
                                   uint32_t *out_subject_id,
                                   struct SgPose *out_pose,
                                   struct SgAdapter *out_adapter);

// Screen point for a base prediction `g_base` from origin `o`, through the
// `index`-th subject's adapter and screen pose.
//
// # Safety
// `handle` must be valid; `g_base` and `o` point to 3 doubles, `out_uv` to 2.
enum SgStatus sg_calibrator_predict(const struct SgCalibrator *handle,
                                    uintptr_t index,
                                    const double *g_base,
                                    const double *o,
                                    double *out_uv);

// Unweighted mean over subjects of the test-split error (mm).
//
// # Safety
// `handle` and `out_mm` must be valid.
enum SgStatus sg_calibrator_test_error(const struct SgCalibrator *handle, double *out_mm);

// Calibration report as JSON. Release the string with [`sg_string_free`].
//
// # Safety
// `handle` and `out_json` must be valid.
enum SgStatus sg_calibrator_report_json(const struct SgCalibrator *handle, char **out_json);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void sg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCREENGAZE_H */
