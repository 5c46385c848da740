//! C ABI over the screengaze library.
//!
//! Every function returns an [`SgStatus`]. On failure a message describing
//! the error is kept per thread and can be read with [`sg_last_error`].
//! Calibration state lives behind the opaque [`SgCalibrator`] handle.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};

use screengaze::adapter::AdapterFrame;
use screengaze::dataset::Dataset;
use screengaze::experiments::{calibrate, evaluate, CalibrationReport};
use screengaze::geometry::{normalize, rodrigues, Vec3};
use screengaze::projection::{Projector, ScreenPoint, ScreenPose};
use screengaze::trainer::TrainConfig;
use screengaze::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Ray parallel to the screen or a zero-length direction.
    Geometry = 3,
    /// Not enough usable data to calibrate.
    InsufficientData = 4,
    Io = 5,
    /// Malformed CSV or JSON input.
    Schema = 6,
    /// Training diverged or every sample failed to project.
    Training = 7,
    /// The handle has no calibration yet.
    NotCalibrated = 8,
    Panic = 9,
}

/// Screen pose: rotation vector `r` (radians) and translation `t` (mm).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgPose {
    pub r: [f64; 3],
    pub t: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgAdapter {
    pub delta: [f64; 3],
    pub bias: [f64; 3],
}

/// Opaque calibration session.
pub struct SgCalibrator {
    config: TrainConfig,
    data: Option<Dataset>,
    report: Option<CalibrationReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> SgStatus {
    match err {
        Error::DegenerateVector { .. } | Error::RayParallelToScreen { .. } | Error::DegenerateAnchors(_) => {
            SgStatus::Geometry
        }
        Error::AllSamplesInvalid { .. } | Error::NonFiniteLoss { .. } | Error::OutOfOrderEpoch { .. } => {
            SgStatus::Training
        }
        Error::InsufficientData(_) => SgStatus::InsufficientData,
        Error::InvalidSpec(_) | Error::InvalidConfig(_) => SgStatus::InvalidArgument,
        Error::Schema { .. } | Error::Mismatch(_) | Error::Csv(_) | Error::Json(_) => SgStatus::Schema,
        Error::Io(_) => SgStatus::Io,
    }
}

struct Fail(SgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn vec3(p: *const f64, what: &str) -> Result<Vec3, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, 3);
    if !s.iter().all(|x| x.is_finite()) {
        return Err(Fail(SgStatus::InvalidArgument, format!("{what} is not finite")));
    }
    Ok(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn pose_of(p: *const SgPose) -> Result<ScreenPose, Fail> {
    let p = p.as_ref().ok_or_else(|| null("pose"))?;
    let pose = ScreenPose::new(Vec3::from(p.r), Vec3::from(p.t));
    if !pose.is_finite() {
        return Err(Fail(SgStatus::InvalidArgument, "pose is not finite".into()));
    }
    Ok(pose)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Rotation matrix of the rotation vector `r`, row-major into `out[9]`.
///
/// # Safety
/// `r` must point to 3 doubles and `out` to 9.
#[no_mangle]
pub unsafe extern "C" fn sg_rodrigues(r: *const f64, out: *mut f64) -> SgStatus {
    guard(|| {
        let r = vec3(r, "r")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = rodrigues(&r);
        let dst = std::slice::from_raw_parts_mut(out, 9);
        for i in 0..3 {
            for j in 0..3 {
                dst[3 * i + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Screen point (mm) hit by gaze `g` from origin `o`.
///
/// # Safety
/// `g` and `o` must point to 3 doubles, `out_uv` to 2.
#[no_mangle]
pub unsafe extern "C" fn sg_project(
    pose: *const SgPose,
    g: *const f64,
    o: *const f64,
    out_uv: *mut f64,
) -> SgStatus {
    guard(|| {
        let pose = pose_of(pose)?;
        let g = normalize(&vec3(g, "g")?)?;
        let o = vec3(o, "o")?;
        if out_uv.is_null() {
            return Err(null("out_uv"));
        }
        let p = Projector::new(&pose).project(&g, &o)?;
        *out_uv = p.u;
        *out_uv.add(1) = p.v;
        Ok(())
    })
}

/// Unit gaze direction from `o` toward the screen point `uv`.
///
/// # Safety
/// `uv` must point to 2 doubles, `o` and `out_g` to 3.
#[no_mangle]
pub unsafe extern "C" fn sg_inverse_project(
    pose: *const SgPose,
    uv: *const f64,
    o: *const f64,
    out_g: *mut f64,
) -> SgStatus {
    guard(|| {
        let pose = pose_of(pose)?;
        if uv.is_null() {
            return Err(null("uv"));
        }
        let (u, v) = (*uv, *uv.add(1));
        let o = vec3(o, "o")?;
        if out_g.is_null() {
            return Err(null("out_g"));
        }
        let g = Projector::new(&pose).inverse_project(&ScreenPoint::new(u, v), &o)?;
        std::slice::from_raw_parts_mut(out_g, 3).copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Creates a calibration session. `config_json` may be null for defaults;
/// omitted fields take their defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_new(config_json: *const c_char, out: *mut *mut SgCalibrator) -> SgStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        config.validate()?;
        *slot = Box::into_raw(Box::new(SgCalibrator {
            config,
            data: None,
            report: None,
        }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`sg_calibrator_new`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_free(handle: *mut SgCalibrator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Loads a sample CSV, replacing any earlier data and calibration.
///
/// # Safety
/// `handle` must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_load_csv(handle: *mut SgCalibrator, path: *const c_char) -> SgStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let path = str_arg(path, "path")?;
        let file = File::open(path).map_err(|e| Fail(SgStatus::Io, format!("{path}: {e}")))?;
        h.data = Some(Dataset::read_csv(BufReader::new(file))?);
        h.report = None;
        Ok(())
    })
}

/// Calibrates every subject of the loaded data.
///
/// # Safety
/// `handle` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_run(handle: *mut SgCalibrator) -> SgStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let data = h
            .data
            .as_ref()
            .ok_or_else(|| Fail(SgStatus::InsufficientData, "no data loaded".into()))?;
        h.report = Some(calibrate(data, &h.config)?);
        Ok(())
    })
}

unsafe fn report<'a>(handle: *const SgCalibrator) -> Result<(&'a SgCalibrator, &'a CalibrationReport), Fail> {
    let h = handle.as_ref().ok_or_else(|| null("handle"))?;
    let r = h
        .report
        .as_ref()
        .ok_or_else(|| Fail(SgStatus::NotCalibrated, "sg_calibrator_run has not succeeded".into()))?;
    Ok((h, r))
}

/// Number of calibrated subjects.
///
/// # Safety
/// `handle` and `out_count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_subject_count(handle: *const SgCalibrator, out_count: *mut usize) -> SgStatus {
    guard(|| {
        let (_, r) = report(handle)?;
        *out(out_count, "out_count")? = r.subjects.len();
        Ok(())
    })
}

/// Learned pose and adapter of the `index`-th subject.
///
/// # Safety
/// `handle` must be valid; each output pointer must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_result(
    handle: *const SgCalibrator,
    index: usize,
    out_subject_id: *mut u32,
    out_pose: *mut SgPose,
    out_adapter: *mut SgAdapter,
) -> SgStatus {
    guard(|| {
        let (_, r) = report(handle)?;
        let s = r
            .subjects
            .get(index)
            .ok_or_else(|| Fail(SgStatus::InvalidArgument, format!("subject index {index} out of range")))?;
        if let Some(id) = out_subject_id.as_mut() {
            *id = s.subject_id;
        }
        if let Some(p) = out_pose.as_mut() {
            *p = SgPose {
                r: s.report.pose.r.into(),
                t: s.report.pose.t.into(),
            };
        }
        if let Some(a) = out_adapter.as_mut() {
            *a = SgAdapter {
                delta: s.report.adapter.delta.into(),
                bias: s.report.adapter.bias.into(),
            };
        }
        Ok(())
    })
}

/// Screen point for a base prediction `g_base` from origin `o`, through the
/// `index`-th subject's adapter and screen pose.
///
/// # Safety
/// `handle` must be valid; `g_base` and `o` point to 3 doubles, `out_uv` to 2.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_predict(
    handle: *const SgCalibrator,
    index: usize,
    g_base: *const f64,
    o: *const f64,
    out_uv: *mut f64,
) -> SgStatus {
    guard(|| {
        let (_, r) = report(handle)?;
        let s = r
            .subjects
            .get(index)
            .ok_or_else(|| Fail(SgStatus::InvalidArgument, format!("subject index {index} out of range")))?;
        let g = normalize(&vec3(g_base, "g_base")?)?;
        let o = vec3(o, "o")?;
        if out_uv.is_null() {
            return Err(null("out_uv"));
        }
        let adapted = AdapterFrame::new(&s.report.adapter).adapt(&g)?;
        let p = Projector::new(&s.report.pose).project(&adapted, &o)?;
        *out_uv = p.u;
        *out_uv.add(1) = p.v;
        Ok(())
    })
}

/// Unweighted mean over subjects of the test-split error (mm).
///
/// # Safety
/// `handle` and `out_mm` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_test_error(handle: *const SgCalibrator, out_mm: *mut f64) -> SgStatus {
    guard(|| {
        let (h, r) = report(handle)?;
        let data = h.data.as_ref().ok_or_else(|| null("data"))?;
        *out(out_mm, "out_mm")? = evaluate(data, r, None)?.overall_mean_mm;
        Ok(())
    })
}

/// Calibration report as JSON. Release the string with [`sg_string_free`].
///
/// # Safety
/// `handle` and `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_calibrator_report_json(handle: *const SgCalibrator, out_json: *mut *mut c_char) -> SgStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        let (_, r) = report(handle)?;
        let json = serde_json::to_string(r).map_err(Error::from)?;
        *slot = CString::new(json)
            .map_err(|_| Fail(SgStatus::Schema, "report contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
