//! C ABI over `f0track`.
//!
//! Handles are opaque heap objects owned by the caller once returned and
//! released with the matching `*_free`. Every fallible call returns an
//! [`F0tStatus`]; on failure a message is kept per thread and read with
//! [`f0t_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use f0track::dsp::FramingConfig;
use f0track::eval::{score_utterance, EvalConfig};
use f0track::models::{load_model, track, TrackerKind, TrackerModel};
use f0track::yin::{yin_track, YinConfig};
use f0track::{Error, F0Contour, Waveform};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F0tStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Parameter = 5,
    DegenerateInput = 6,
    ModelMismatch = 7,
    Alignment = 8,
    OutOfRange = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F0tTrackerKind {
    DnnReg = 0,
    RnnReg = 1,
    DnnHmm = 2,
}

/// Loaded tracker model.
pub struct F0tModel(TrackerModel);

/// F0 contour; frame `i` sits at `offset_s + frame_index * hop_s`.
pub struct F0tContour(F0Contour);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct F0tFrame {
    pub frame_index: usize,
    /// 0 when unvoiced.
    pub f0_hz: f64,
    pub voiced: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct F0tScore {
    pub n_voiced: usize,
    pub n_gpe: usize,
    pub n_fpe: usize,
    pub gpe_rate: f64,
    pub fpe_mean_hz: f64,
    pub fpe_std_hz: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> F0tStatus {
    match e {
        Error::Io { .. } => F0tStatus::Io,
        Error::Format(_) | Error::Parse { .. } => F0tStatus::Format,
        Error::Parameter(_) | Error::Config(_) | Error::Dimension(_) => F0tStatus::Parameter,
        Error::DegenerateInput(_) | Error::EmptyBatch(_) => F0tStatus::DegenerateInput,
        Error::ModelMismatch(_) => F0tStatus::ModelMismatch,
        Error::Alignment(_) => F0tStatus::Alignment,
        Error::Index { .. } => F0tStatus::OutOfRange,
        Error::Divergence(_) => F0tStatus::Internal,
    }
}

struct Fail(F0tStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(F0tStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> F0tStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => F0tStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            F0tStatus::Panic
        }
    }
}

unsafe fn ref_of<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller guarantees `p` is null or a live handle.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn samples_of<'a>(samples: *const f64, n: usize) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if samples.is_null() {
        return Err(null("samples"));
    }
    // SAFETY: the caller guarantees `n` readable doubles at `samples`.
    Ok(unsafe { std::slice::from_raw_parts(samples, n) })
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: `out` is non-null and writable per the caller contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn f0t_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model file written by `f0track train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_model_load(path: *const c_char, out: *mut *mut F0tModel) -> F0tStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Fail(F0tStatus::InvalidUtf8, "path is not UTF-8".into()))?;
        let model = load_model(Path::new(path))?;
        unsafe { put(out, F0tModel(model)) }
    })
}

/// # Safety
/// `model` must be null or a handle from [`f0t_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn f0t_model_free(model: *mut F0tModel) {
    if !model.is_null() {
        // SAFETY: allocated by `put` and not freed before.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_model_kind(
    model: *const F0tModel,
    out: *mut F0tTrackerKind,
) -> F0tStatus {
    guard(|| {
        let m = unsafe { ref_of(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match m.0.kind {
            TrackerKind::DnnReg => F0tTrackerKind::DnnReg,
            TrackerKind::RnnReg => F0tTrackerKind::RnnReg,
            TrackerKind::DnnHmm => F0tTrackerKind::DnnHmm,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = kind };
        Ok(())
    })
}

/// Tracks `n` mono samples at `sample_rate_hz` with a loaded model.
///
/// # Safety
/// `model` must be a live handle, `samples` must hold `n` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_track(
    model: *const F0tModel,
    samples: *const f64,
    n: usize,
    sample_rate_hz: u32,
    out: *mut *mut F0tContour,
) -> F0tStatus {
    guard(|| {
        let m = unsafe { ref_of(model, "model") }?;
        let w = Waveform::new(unsafe { samples_of(samples, n) }?.to_vec(), sample_rate_hz)?;
        let c = track(&m.0, &w)?;
        unsafe { put(out, F0tContour(c)) }
    })
}

/// Tracks with the YIN baseline on the default 25 ms / 5 ms grid, dropping
/// `head_trim` and `tail_trim` frames.
///
/// # Safety
/// `samples` must hold `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_yin_track(
    samples: *const f64,
    n: usize,
    sample_rate_hz: u32,
    head_trim: usize,
    tail_trim: usize,
    out: *mut *mut F0tContour,
) -> F0tStatus {
    guard(|| {
        let w = Waveform::new(unsafe { samples_of(samples, n) }?.to_vec(), sample_rate_hz)?;
        let cfg = YinConfig {
            framing: FramingConfig {
                head_trim_frames: head_trim,
                tail_trim_frames: tail_trim,
                ..FramingConfig::default()
            },
            ..YinConfig::default()
        };
        let c = yin_track(&w, &cfg)?;
        unsafe { put(out, F0tContour(c)) }
    })
}

/// Builds a contour from per-frame values; values `<= 0` are unvoiced.
///
/// # Safety
/// `values` must hold `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_from_values(
    values: *const f64,
    n: usize,
    hop_s: f64,
    offset_s: f64,
    out: *mut *mut F0tContour,
) -> F0tStatus {
    guard(|| {
        let c = F0Contour::from_values(unsafe { samples_of(values, n) }?, hop_s, offset_s)?;
        unsafe { put(out, F0tContour(c)) }
    })
}

/// # Safety
/// `contour` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_free(contour: *mut F0tContour) {
    if !contour.is_null() {
        // SAFETY: allocated by `put` and not freed before.
        drop(unsafe { Box::from_raw(contour) });
    }
}

/// Number of frames; 0 for a null handle.
///
/// # Safety
/// `contour` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_len(contour: *const F0tContour) -> usize {
    unsafe { contour.as_ref() }.map_or(0, |c| c.0.len())
}

/// # Safety
/// `contour` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_hop_s(contour: *const F0tContour) -> f64 {
    unsafe { contour.as_ref() }.map_or(f64::NAN, |c| c.0.hop_s)
}

/// # Safety
/// `contour` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_offset_s(contour: *const F0tContour) -> f64 {
    unsafe { contour.as_ref() }.map_or(f64::NAN, |c| c.0.offset_s)
}

/// Frame at position `i`.
///
/// # Safety
/// `contour` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_frame(
    contour: *const F0tContour,
    i: usize,
    out: *mut F0tFrame,
) -> F0tStatus {
    guard(|| {
        let c = unsafe { ref_of(contour, "contour") }?;
        let f = c.0.frames.get(i).ok_or_else(|| {
            Fail(
                F0tStatus::OutOfRange,
                format!("frame {i} out of range 0..{}", c.0.len()),
            )
        })?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null above.
        unsafe {
            *out = F0tFrame {
                frame_index: f.frame_index,
                f0_hz: f.f0_hz,
                voiced: u8::from(f.voiced),
            }
        };
        Ok(())
    })
}

/// Copies per-frame F0 (0 when unvoiced) into `out`, which must have room
/// for `f0t_contour_len` values; `capacity` is checked.
///
/// # Safety
/// `contour` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn f0t_contour_values(
    contour: *const F0tContour,
    out: *mut f64,
    capacity: usize,
) -> F0tStatus {
    guard(|| {
        let c = unsafe { ref_of(contour, "contour") }?;
        let n = c.0.len();
        if capacity < n {
            return Err(Fail(
                F0tStatus::OutOfRange,
                format!("capacity {capacity} < {n} frames"),
            ));
        }
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: `out` holds at least `n` doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, n) };
        for (d, f) in dst.iter_mut().zip(&c.0.frames) {
            *d = f.f0_hz;
        }
        Ok(())
    })
}

/// Scores `est` against a reference on the same grid. A non-positive
/// `gpe_threshold_s` selects the default of 0.625 ms.
///
/// # Safety
/// Both contours must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn f0t_score(
    est: *const F0tContour,
    reference: *const F0tContour,
    gpe_threshold_s: f64,
    out: *mut F0tScore,
) -> F0tStatus {
    guard(|| {
        let e = unsafe { ref_of(est, "est") }?;
        let r = unsafe { ref_of(reference, "reference") }?;
        let cfg = if gpe_threshold_s > 0.0 {
            EvalConfig {
                gpe_period_threshold_s: gpe_threshold_s,
            }
        } else {
            EvalConfig::default()
        };
        let s = score_utterance(&e.0, &r.0, &cfg)?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null above.
        unsafe {
            *out = F0tScore {
                n_voiced: s.n_voiced,
                n_gpe: s.n_gpe,
                n_fpe: s.n_fpe(),
                gpe_rate: s.gpe_rate(),
                fpe_mean_hz: s.fpe_mean_hz(),
                fpe_std_hz: s.fpe_std_hz(),
            }
        };
        Ok(())
    })
}
