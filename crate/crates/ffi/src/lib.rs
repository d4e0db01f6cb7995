//! C ABI for the maskfill denoiser.
//!
//! Objects cross the boundary as opaque handles ([`MfImage`], [`MfModel`])
//! owned by the caller and released with the matching `*_free` function.
//! Every call returns an [`MfStatus`]; on failure [`mf_last_error`] gives a
//! message for the calling thread.
//!
//! Images are planar `float` data, channel-major then row-major, with
//! intensities on the `[0, 1]` scale.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use maskfill::config::RunConfig;
use maskfill::masking::MaskSpec;
use maskfill::model::{Hourglass, HourglassConfig};
use maskfill::noise::NoiseSpec;
use maskfill::zeroshot::{denoise, direct_ensemble, init_model, mask_rng, Preset};
use maskfill::{metrics, stream_rng, Error, Image};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid configuration or argument value.
    Config = 2,
    /// An operation's precondition did not hold.
    Contract = 3,
    /// Mismatched image or tensor shapes.
    Shape = 4,
    /// Reading or writing a file failed.
    Io = 5,
    /// A file was not a valid image or weight file.
    Format = 6,
    /// Optimization produced a non-finite value.
    Numeric = 7,
    /// A string argument was not valid UTF-8.
    Utf8 = 8,
    /// An internal error; the library caught a panic.
    Internal = 9,
}

/// An image: `channels × height × width` floats.
pub struct MfImage {
    inner: Image,
}

/// An hourglass network with its weights.
pub struct MfModel {
    inner: Hourglass,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn status_of(e: &Error) -> MfStatus {
    match e {
        Error::Config(_) => MfStatus::Config,
        Error::Contract(_) => MfStatus::Contract,
        Error::Shape(_) => MfStatus::Shape,
        Error::Io { .. } => MfStatus::Io,
        Error::Format(_) => MfStatus::Format,
        Error::Numeric(_) => MfStatus::Numeric,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            MfStatus::NullArgument
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            MfStatus::Utf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MfStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| Fail::Utf8(what))
}

unsafe fn req_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    opt_str(p, what)?.ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ------------------------------------------------------------------ images

/// New image copied from `data` (`channels·height·width` floats), or filled
/// with zeros when `data` is null.
///
/// # Safety
/// `data`, if not null, must point to that many readable floats; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_image_new(
    channels: usize,
    height: usize,
    width: usize,
    data: *const f32,
    out: *mut *mut MfImage,
) -> MfStatus {
    guard(|| {
        let n = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Config("image dimensions overflow".into()))?;
        let values = if data.is_null() {
            vec![0.0; n]
        } else {
            std::slice::from_raw_parts(data, n).to_vec()
        };
        put(out, MfImage { inner: Image::new(channels, height, width, values)? })
    })
}

/// Loads a PNG or PNM file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_image_load(path: *const c_char, out: *mut *mut MfImage) -> MfStatus {
    guard(|| {
        let path = req_str(path, "path")?;
        put(out, MfImage { inner: maskfill::io::load_image(path)?.image })
    })
}

/// Saves with 8 bits per sample; the format follows the file extension.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mf_image_save(image: *const MfImage, path: *const c_char) -> MfStatus {
    guard(|| {
        let image = deref(image, "image")?;
        let path = req_str(path, "path")?;
        maskfill::io::save_image(&image.inner, path)?;
        Ok(())
    })
}

/// Writes the dimensions; any of the out pointers may be null.
///
/// # Safety
/// `image` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_image_dims(
    image: *const MfImage,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> MfStatus {
    guard(|| {
        let (c, h, w) = deref(image, "image")?.inner.dims();
        for (p, v) in [(channels, c), (height, h), (width, w)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Borrowed pointer to the image's samples, valid until the image is freed
/// or modified. Null if `image` is null.
///
/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mf_image_data(image: *const MfImage) -> *const f32 {
    image.as_ref().map_or(ptr::null(), |i| i.inner.data().as_ptr())
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_image_free(image: *mut MfImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ------------------------------------------------------------------ models

/// Fresh network with the default architecture for `channels`-channel
/// images, initialized from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_model_new(channels: usize, seed: u64, out: *mut *mut MfModel) -> MfStatus {
    guard(|| {
        let inner = init_model(None, HourglassConfig::default(), channels, seed)?;
        put(out, MfModel { inner })
    })
}

/// Loads a weight file written by `mf_model_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_model_load(path: *const c_char, out: *mut *mut MfModel) -> MfStatus {
    guard(|| {
        let path = PathBuf::from(req_str(path, "path")?);
        let weights = maskfill::model::load_weights(&path)?;
        put(out, MfModel { inner: Hourglass::from_weights(weights)? })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mf_model_save(model: *const MfModel, path: *const c_char) -> MfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        model.inner.save_weights(req_str(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_model_free(model: *mut MfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// -------------------------------------------------------------- operations

/// Noisy copy of `clean`. `kind` is one of `gaussian`, `poisson`, `nlf`,
/// `speckle`, `salt_pepper`; `param` is its strength on the `[0, 1]` scale.
///
/// # Safety
/// `clean` must be a live handle, `kind` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mf_add_noise(
    clean: *const MfImage,
    kind: *const c_char,
    param: f64,
    seed: u64,
    out: *mut *mut MfImage,
) -> MfStatus {
    guard(|| {
        let clean = deref(clean, "clean")?;
        let spec = NoiseSpec::from_kind(req_str(kind, "kind")?, param)?;
        let noisy = spec.apply(&clean.inner, &mut stream_rng(seed, 100))?;
        put(out, MfImage { inner: noisy })
    })
}

/// Denoises `noisy` by iterative filling, training `model` in place.
///
/// `preset` names a preset (`synthetic-default`, `synthetic-faster`,
/// `real-default`, `real-sidd`) and may be null for `synthetic-default`.
/// `overrides_toml` may hold `key = value` lines for any denoising option
/// (for example `iterations = 300`) and may be null.
///
/// # Safety
/// `model` and `noisy` must be live handles; string arguments must be null
/// or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_denoise(
    model: *mut MfModel,
    noisy: *const MfImage,
    preset: *const c_char,
    overrides_toml: *const c_char,
    out: *mut *mut MfImage,
) -> MfStatus {
    guard(|| {
        let model = deref_mut(model, "model")?;
        let noisy = deref(noisy, "noisy")?;
        let preset = match opt_str(preset, "preset")? {
            Some(name) => Some(name.parse::<Preset>()?),
            None => None,
        };
        let run = match opt_str(overrides_toml, "overrides_toml")? {
            Some(text) => RunConfig::parse(&format!("[denoise]\n{text}"))?,
            None => RunConfig::default(),
        };
        let cfg = run.denoise_config(preset, &Default::default())?;
        let result = denoise(&mut model.inner, &noisy.inner, &cfg, None, None)?;
        put(out, MfImage { inner: result.image })
    })
}

/// Averages the model's predictions over `masks` random masks with ratio
/// `mask_ratio`, without training.
///
/// # Safety
/// `model` and `noisy` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_direct_ensemble(
    model: *const MfModel,
    noisy: *const MfImage,
    masks: usize,
    mask_ratio: f64,
    seed: u64,
    out: *mut *mut MfImage,
) -> MfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let noisy = deref(noisy, "noisy")?;
        let spec = MaskSpec::new(mask_ratio, false)?;
        let result = direct_ensemble(&model.inner, &noisy.inner, &spec, masks, &mut mask_rng(seed))?;
        put(out, MfImage { inner: result.image })
    })
}

/// PSNR in dB with peak 1.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_psnr(a: *const MfImage, b: *const MfImage, out: *mut f64) -> MfStatus {
    guard(|| {
        let v = metrics::psnr(&deref(a, "a")?.inner, &deref(b, "b")?.inner)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}

/// Mean SSIM over channels (11×11 Gaussian window, σ = 1.5).
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_ssim(a: *const MfImage, b: *const MfImage, out: *mut f64) -> MfStatus {
    guard(|| {
        let v = metrics::ssim(&deref(a, "a")?.inner, &deref(b, "b")?.inner)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}
