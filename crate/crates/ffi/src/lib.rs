//! C ABI over imprint-lab: load a trained detector and score images, load
//! a fitted Laplace field and draw imprints.
//!
//! Every fallible call returns an [`ImlStatus`]; on failure the message is
//! available from [`iml_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use imprint_lab::corpus::{Image, Label, CHANNELS};
use imprint_lab::detector::{Detector, THRESHOLD};
use imprint_lab::imprint::{sample_imprint, LaplaceField};
use imprint_lab::{rng, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Precondition = 6,
    Capability = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for ImlStatus {
    fn from(e: &Error) -> Self {
        match e.tag() {
            "io" => ImlStatus::Io,
            "format" | "codec" => ImlStatus::Format,
            "shape" | "alignment" => ImlStatus::Shape,
            "precondition" | "empty-dataset" => ImlStatus::Precondition,
            "capability" => ImlStatus::Capability,
            "config" | "policy" | "fusion-spec" => ImlStatus::InvalidArgument,
            _ => ImlStatus::Internal,
        }
    }
}

/// A trained detector.
pub struct ImlDetector {
    inner: Detector,
}

/// A per-element Laplace imprint field.
pub struct ImlField {
    inner: LaplaceField,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: ImlStatus, msg: impl Into<String>) -> ImlStatus {
    set_error(msg);
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), ImlStatus>) -> ImlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImlStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(ImlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lib_err(e: Error) -> ImlStatus {
    let s = ImlStatus::from(&e);
    fail(s, e.to_string())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, ImlStatus> {
    if p.is_null() {
        return Err(fail(ImlStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null and, per the caller contract, nul-terminated.
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(ImlStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn iml_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no interior nul"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn iml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Probability at or above which an image is called fake.
#[no_mangle]
pub extern "C" fn iml_decision_threshold() -> f64 {
    THRESHOLD
}

/// Load a detector checkpoint into `*out`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iml_detector_load(path: *const c_char, out: *mut *mut ImlDetector) -> ImlStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ImlStatus::NullPointer, "out is null"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        let inner = Detector::load(&path).map_err(lib_err)?;
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = Box::into_raw(Box::new(ImlDetector { inner })) };
        Ok(())
    })
}

/// Release a detector. Null is ignored.
///
/// # Safety
/// `det` must come from [`iml_detector_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iml_detector_free(det: *mut ImlDetector) {
    if !det.is_null() {
        // SAFETY: allocated by `iml_detector_load`.
        drop(unsafe { Box::from_raw(det) });
    }
}

/// Input side length in pixels, or 0 for a null handle.
///
/// # Safety
/// `det` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn iml_detector_resolution(det: *const ImlDetector) -> usize {
    // SAFETY: null or live per the caller contract.
    unsafe { det.as_ref() }.map_or(0, |d| d.inner.resolution())
}

/// Fake probabilities of `n_images` RGB images of `size x size` pixels.
/// `pixels` holds `n_images * 3 * size * size` floats in `[0, 1]`, each image
/// channel-planar (all red, then green, then blue, row-major). Writes
/// `n_images` probabilities to `out_probs`.
///
/// # Safety
/// `det` must be a live handle; `pixels` and `out_probs` must point to
/// arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn iml_detector_predict(
    det: *const ImlDetector,
    pixels: *const f32,
    n_images: usize,
    size: usize,
    out_probs: *mut f64,
) -> ImlStatus {
    guard(|| {
        // SAFETY: null or live per the caller contract.
        let det = unsafe { det.as_ref() }.ok_or_else(|| fail(ImlStatus::NullPointer, "detector is null"))?;
        if pixels.is_null() || out_probs.is_null() {
            return Err(fail(ImlStatus::NullPointer, "pixel or output buffer is null"));
        }
        if n_images == 0 {
            return Ok(());
        }
        if size != det.inner.resolution() {
            return Err(fail(
                ImlStatus::Shape,
                format!("images are {size}px, detector expects {}px", det.inner.resolution()),
            ));
        }
        let per = CHANNELS * size * size;
        // SAFETY: caller guarantees `n_images * per` readable floats.
        let data = unsafe { std::slice::from_raw_parts(pixels, n_images * per) };
        let images = data
            .chunks(per)
            .enumerate()
            .map(|(i, px)| Image::new(format!("input-{i}"), Label::Real, None, size, px.to_vec()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(lib_err)?;
        let refs: Vec<&Image> = images.iter().collect();
        let probs = det.inner.predict_proba(&refs).map_err(lib_err)?;
        // SAFETY: caller guarantees `n_images` writable doubles.
        unsafe { std::slice::from_raw_parts_mut(out_probs, n_images) }.copy_from_slice(&probs);
        Ok(())
    })
}

/// Load a Laplace field into `*out`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iml_field_load(path: *const c_char, out: *mut *mut ImlField) -> ImlStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ImlStatus::NullPointer, "out is null"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        let inner = LaplaceField::load(&path).map_err(lib_err)?;
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = Box::into_raw(Box::new(ImlField { inner })) };
        Ok(())
    })
}

/// Release a field. Null is ignored.
///
/// # Safety
/// `field` must come from [`iml_field_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn iml_field_free(field: *mut ImlField) {
    if !field.is_null() {
        // SAFETY: allocated by `iml_field_load`.
        drop(unsafe { Box::from_raw(field) });
    }
}

/// Write the field's `[channels, height, width]` to `out_shape`.
///
/// # Safety
/// `field` must be a live handle and `out_shape` point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn iml_field_shape(field: *const ImlField, out_shape: *mut usize) -> ImlStatus {
    guard(|| {
        // SAFETY: null or live per the caller contract.
        let f = unsafe { field.as_ref() }.ok_or_else(|| fail(ImlStatus::NullPointer, "field is null"))?;
        if out_shape.is_null() {
            return Err(fail(ImlStatus::NullPointer, "out_shape is null"));
        }
        // SAFETY: 3 writable values per the caller contract.
        unsafe { std::slice::from_raw_parts_mut(out_shape, 3) }.copy_from_slice(&f.inner.shape());
        Ok(())
    })
}

/// Draw `n_draws` imprints from the field with a seeded generator. `out`
/// receives `n_draws * C * H * W` values, draw-major; `len` is its capacity.
///
/// # Safety
/// `field` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn iml_field_sample(
    field: *const ImlField,
    seed: u64,
    n_draws: usize,
    out: *mut f64,
    len: usize,
) -> ImlStatus {
    guard(|| {
        // SAFETY: null or live per the caller contract.
        let f = unsafe { field.as_ref() }.ok_or_else(|| fail(ImlStatus::NullPointer, "field is null"))?;
        if out.is_null() {
            return Err(fail(ImlStatus::NullPointer, "out is null"));
        }
        let d = f.inner.len();
        if len < n_draws * d {
            return Err(fail(
                ImlStatus::InvalidArgument,
                format!("buffer holds {len} values, {n_draws} draws need {}", n_draws * d),
            ));
        }
        // SAFETY: `len` writable doubles per the caller contract.
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        let mut r = rng::stream(seed, "ffi-sample");
        for chunk in out.chunks_mut(d).take(n_draws) {
            chunk.copy_from_slice(sample_imprint(&f.inner, &mut r).values());
        }
        Ok(())
    })
}
