//! C ABI over the `densesr` crate.
//!
//! Every fallible function returns a [`DsrStatus`]; on failure a message is
//! available from [`dsr_last_error_message`] on the same thread. Images cross
//! the boundary as interleaved 8-bit buffers (`RGBRGB...`, row-major).
//! Panics never unwind into C; they surface as `DSR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use densesr::checkpoint::Checkpoint;
use densesr::metrics::{self, Quantized};
use densesr::network::Model;
use densesr::pooling::{self, Arrangement};
use densesr::{Error, Shape, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Decode = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsrArrangement {
    Direct = 0,
    Insert = 1,
}

/// Opaque model handle.
pub struct DsrModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn classify(err: &Error) -> DsrStatus {
    match err {
        Error::Io { .. } => DsrStatus::Io,
        Error::BadMagic(_) | Error::VersionMismatch { .. } | Error::Truncated(_) | Error::MalformedCheckpoint(_) => {
            DsrStatus::BadCheckpoint
        }
        Error::ImageDecode { .. } | Error::ImageEncode { .. } => DsrStatus::Decode,
        Error::NonFinite(_) => DsrStatus::Numeric,
        _ => DsrStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (DsrStatus, String)>) -> DsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DsrStatus::Panic
        }
    }
}

fn lift(err: Error) -> (DsrStatus, String) {
    (classify(&err), err.to_string())
}

fn null(what: &str) -> (DsrStatus, String) {
    (DsrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (DsrStatus, String) {
    (DsrStatus::InvalidArgument, msg)
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (DsrStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (DsrStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn interleaved_to_tensor(bytes: &[u8], w: usize, h: usize, c: usize) -> Tensor {
    Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| bytes[(y * w + x) * c + ch] as f64)
}

fn checked_len(dims: &[usize]) -> Result<usize, (DsrStatus, String)> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("dimensions {dims:?} are zero or overflow")))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint. On success `*out` owns a model to release with
/// [`dsr_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsr_model_load(path: *const c_char, out: *mut *mut DsrModel) -> DsrStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(DsrModel { model: ckpt.model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`dsr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsr_model_free(model: *mut DsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor of the model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsr_model_scale(model: *const DsrModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.config().scale as u32)
}

/// Number of trainable scalars, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsr_model_param_count(model: *const DsrModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.param_count() as u64)
}

/// Super-resolves an interleaved RGB8 image of `width x height` into `out`,
/// which must hold `3 * width * height * scale²` bytes.
///
/// # Safety
/// `rgb` must be readable for `3 * width * height` bytes and `out` writable
/// for `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dsr_model_upscale(
    model: *const DsrModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut u8,
    out_len: usize,
) -> DsrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let (w, h) = (width as usize, height as usize);
        let input = slice(rgb, checked_len(&[w, h, 3])?, "rgb")?;
        let scale = model.config().scale;
        let needed = checked_len(&[w * scale, h * scale, 3])?;
        if out_len != needed {
            return Err(invalid(format!("out_len {out_len}, expected {needed}")));
        }
        let out = slice_mut(out, out_len, "out")?;
        let lr = interleaved_to_tensor(input, w, h, 3).map(|v| v / 255.0);
        let sr = model.forward(&lr).map_err(lift)?;
        let q = Quantized::from_unit(&sr);
        let (ow, oh) = (w * scale, h * scale);
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..3 {
                    out[(y * ow + x) * 3 + c] = q.data[q.shape.index(0, c, y, x)];
                }
            }
        }
        Ok(())
    })
}

/// PSNR in dB of two 8-bit buffers of equal length; `+inf` when identical.
///
/// # Safety
/// `a` and `b` must be readable for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsr_psnr_u8(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> DsrStatus {
    guard(|| {
        let shape = Shape::new(1, 1, 1, checked_len(&[len])?);
        let a = Quantized { shape, data: slice(a, len, "a")?.to_vec() };
        let b = Quantized { shape, data: slice(b, len, "b")?.to_vec() };
        let v = metrics::psnr(&a, &b).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Mean SSIM (11x11 Gaussian window, range 255) of two interleaved 8-bit
/// images with `channels` channels. Both sides must be at least 11 pixels.
///
/// # Safety
/// `a` and `b` must be readable for `width * height * channels` bytes; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsr_ssim_u8(
    a: *const u8,
    b: *const u8,
    width: u32,
    height: u32,
    channels: u32,
    out: *mut f64,
) -> DsrStatus {
    guard(|| {
        let (w, h, c) = (width as usize, height as usize, channels as usize);
        let len = checked_len(&[w, h, c])?;
        let to_q = |bytes: &[u8]| {
            let t = interleaved_to_tensor(bytes, w, h, c);
            Quantized {
                shape: t.shape(),
                data: t.data().iter().map(|&v| v as u8).collect(),
            }
        };
        let qa = to_q(slice(a, len, "a")?);
        let qb = to_q(slice(b, len, "b")?);
        let v = metrics::ssim(&qa, &qb).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Shuffle-pools a planar `channels x height x width` array by `factor` into
/// `out`, which must hold the same number of values. `arrangement` is a
/// [`DsrArrangement`] value.
///
/// # Safety
/// `input` and `out` must be valid for `channels * height * width` values.
#[no_mangle]
pub unsafe extern "C" fn dsr_shuffle_pool(
    input: *const f64,
    channels: u32,
    height: u32,
    width: u32,
    factor: u32,
    arrangement: u32,
    out: *mut f64,
    out_len: usize,
) -> DsrStatus {
    guard(|| {
        let (c, h, w) = (channels as usize, height as usize, width as usize);
        let len = checked_len(&[c, h, w])?;
        if out_len != len {
            return Err(invalid(format!("out_len {out_len}, expected {len}")));
        }
        let x = Tensor::new(Shape::new(1, c, h, w), slice(input, len, "input")?.to_vec()).map_err(lift)?;
        let arrangement = match arrangement {
            0 => Arrangement::Direct,
            1 => Arrangement::Insert,
            other => return Err(invalid(format!("unknown arrangement {other}"))),
        };
        let y = pooling::shuffle_pool(&x, arrangement, factor as usize).map_err(lift)?;
        slice_mut(out, len, "out")?.copy_from_slice(y.data());
        Ok(())
    })
}
