//! C ABI over relightkit: opaque handles for models and captures, status codes, and a
//! per-thread last-error message.
//!
//! Images cross the boundary as planar `float` buffers (`channels × height × width`,
//! values in [0, 1]). Every function returns an [`RlkStatus`]; on failure the message is
//! available from [`rlk_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use relightkit::diffusion::{checkpoint, env_conditioning, Denoiser, Schedule};
use relightkit::image::Image;
use relightkit::infer::{ddim_sample, DdimConfig};
use relightkit::synthstage::{synth_capture, write_capture, CaptureConfig, CaptureSet};
use relightkit::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlkStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Bad argument or shape.
    InvalidArgument = 2,
    /// Unreadable or malformed input data.
    DataError = 3,
    /// Non-finite values during computation.
    NumericError = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Trained denoiser with its noise schedule.
pub struct RlkModel {
    net: Denoiser<f32>,
    schedule: Schedule,
}

/// Rendered synthetic capture.
pub struct RlkCapture {
    inner: CaptureSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &Error) -> RlkStatus {
    match e {
        Error::Numeric(_) => RlkStatus::NumericError,
        Error::Invalid(_) | Error::Shape(_) | Error::EmptyMask => RlkStatus::InvalidArgument,
        _ => RlkStatus::DataError,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, converting errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RlkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RlkStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            RlkStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            RlkStatus::Panic
        }
    }
}

fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, per the API contract, NUL-terminated.
    let s = unsafe { CStr::from_ptr(p) };
    let s = s
        .to_str()
        .map_err(|_| Fail::Lib(Error::Invalid(format!("{what} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

fn image_arg(
    data: *const f32,
    channels: usize,
    width: usize,
    height: usize,
    what: &'static str,
) -> Result<Image, Fail> {
    if data.is_null() {
        return Err(Fail::Null(what));
    }
    let n = channels
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail::Lib(Error::Invalid(format!("{what}: empty or oversized image"))))?;
    // SAFETY: caller guarantees `n` readable floats.
    let slice = unsafe { std::slice::from_raw_parts(data, n) };
    Ok(Image::from_data(channels, width, height, slice.to_vec())?)
}

fn write_out(out: *mut f32, img: &Image) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    // SAFETY: caller guarantees room for the image.
    unsafe { std::ptr::copy_nonoverlapping(img.data.as_ptr(), out, img.data.len()) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rlk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rlk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint (adapters are merged). Free with [`rlk_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlk_model_load(path: *const c_char, out: *mut *mut RlkModel) -> RlkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let trainer = checkpoint::load(&path_arg(path, "path")?)?;
        let model = RlkModel {
            net: trainer.model()?,
            schedule: trainer.schedule(),
        };
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(model)) };
        Ok(())
    })
}

/// Freshly initialized (untrained) default model, mainly for smoke tests.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlk_model_init(seed: u64, out: *mut *mut RlkModel) -> RlkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = RlkModel {
            net: Denoiser::init(&Default::default(), seed)?,
            schedule: Schedule::default(),
        };
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(model)) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rlk_model_free(model: *mut RlkModel) {
    if !model.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Relight one frame. `flat` and `env` are 3-channel planar images of `width × height`
/// (`env` already tone-mapped into the camera frame); `out` receives the same shape.
/// Both sides must be multiples of 4.
///
/// # Safety
/// Buffers must hold `3 · width · height` floats; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn rlk_model_relight(
    model: *const RlkModel,
    flat: *const f32,
    env: *const f32,
    width: usize,
    height: usize,
    ddim_steps: usize,
    seed: u64,
    out: *mut f32,
) -> RlkStatus {
    guard(|| {
        // SAFETY: live handle per contract.
        let m = unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?;
        let flat = image_arg(flat, 3, width, height, "flat")?;
        let env = image_arg(env, 3, width, height, "env")?;
        let cfg = DdimConfig {
            steps: ddim_steps,
            eta: 0.0,
            seed,
        };
        let img = ddim_sample(&m.net, &m.schedule, &flat, &env, &cfg)?;
        write_out(out, &img)
    })
}

/// Render a synthetic capture session. Free with [`rlk_capture_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlk_capture_synth(
    subject_id: u64,
    complexity: u8,
    pairs: usize,
    cameras: usize,
    image_size: usize,
    out: *mut *mut RlkCapture,
) -> RlkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if !(1..=4).contains(&complexity) || cameras == 0 || image_size == 0 {
            return Err(Fail::Lib(Error::Invalid(
                "complexity must be 1..=4 and sizes positive".into(),
            )));
        }
        let cfg = CaptureConfig {
            subject_id,
            complexity,
            n_pairs: pairs,
            n_cameras: cameras,
            image_size,
            ..CaptureConfig::default()
        };
        let cap = RlkCapture {
            inner: synth_capture(&cfg)?,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(cap)) };
        Ok(())
    })
}

/// # Safety
/// `capture` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rlk_capture_free(capture: *mut RlkCapture) {
    if !capture.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(capture) });
    }
}

/// Number of (frame, camera) pairs and the square image side.
///
/// # Safety
/// `capture` must be live; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlk_capture_info(
    capture: *const RlkCapture,
    n_pairs: *mut usize,
    image_size: *mut usize,
) -> RlkStatus {
    guard(|| {
        // SAFETY: live handle per contract.
        let c = unsafe { capture.as_ref() }.ok_or(Fail::Null("capture"))?;
        if n_pairs.is_null() || image_size.is_null() {
            return Err(Fail::Null("outputs"));
        }
        // SAFETY: checked non-null above.
        unsafe {
            *n_pairs = c.inner.pairs.len();
            *image_size = c.inner.config.image_size;
        }
        Ok(())
    })
}

/// Copy pair `index`'s flat frame, relit frame and camera-frame env conditioning into
/// three caller buffers of `3 · size · size` floats each. Any output may be null to skip it.
///
/// # Safety
/// `capture` must be live; non-null outputs must be large enough.
#[no_mangle]
pub unsafe extern "C" fn rlk_capture_pair(
    capture: *const RlkCapture,
    index: usize,
    flat: *mut f32,
    relit: *mut f32,
    env: *mut f32,
) -> RlkStatus {
    guard(|| {
        // SAFETY: live handle per contract.
        let c = unsafe { capture.as_ref() }.ok_or(Fail::Null("capture"))?;
        let pair = c
            .inner
            .pairs
            .get(index)
            .ok_or_else(|| Fail::Lib(Error::Invalid(format!("pair {index} out of range"))))?;
        if !flat.is_null() {
            write_out(flat, &pair.flat)?;
        }
        if !relit.is_null() {
            write_out(relit, &pair.relit)?;
        }
        if !env.is_null() {
            let cam = &c.inner.cameras[pair.camera_id];
            let cond = env_conditioning(
                &c.inner.lights[pair.light_id],
                cam,
                pair.flat.width,
                pair.flat.height,
            )?;
            write_out(env, &cond)?;
        }
        Ok(())
    })
}

/// Write the capture (frames, masks, lights, manifest) below `dir`.
///
/// # Safety
/// `capture` must be live; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rlk_capture_write(
    capture: *const RlkCapture,
    dir: *const c_char,
) -> RlkStatus {
    guard(|| {
        // SAFETY: live handle per contract.
        let c = unsafe { capture.as_ref() }.ok_or(Fail::Null("capture"))?;
        write_capture(&c.inner, &path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// PSNR in dB (capped at 99) between two planar images of identical shape.
///
/// # Safety
/// Both buffers must hold `channels · width · height` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlk_psnr(
    a: *const f32,
    b: *const f32,
    channels: usize,
    width: usize,
    height: usize,
    out: *mut f64,
) -> RlkStatus {
    guard(|| {
        let a = image_arg(a, channels, width, height, "a")?;
        let b = image_arg(b, channels, width, height, "b")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let v = relightkit::metrics::psnr(&a, &b)?;
        // SAFETY: checked non-null above.
        unsafe { *out = v };
        Ok(())
    })
}
