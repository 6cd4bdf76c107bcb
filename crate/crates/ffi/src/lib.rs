//! C ABI over the scene-latent library.
//!
//! Every fallible function returns an [`SlStatus`]; on failure the message is
//! available from [`sl_last_error_message`] on the same thread until the next
//! failing call. Buffers are caller-owned; models are opaque handles released
//! with [`sl_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::Array2;
use scene_latent::analysis::{cosine_distance, tsne, TsneConfig};
use scene_latent::config::PipelineConfig;
use scene_latent::events::percentile_linear;
use scene_latent::geogrid::{hex_centroid, hex_index, HexCoord};
use scene_latent::pipeline::run_pipeline;
use scene_latent::vae::VaeModel;
use scene_latent::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    Parse = 4,
    Validation = 5,
    Numeric = 6,
    Domain = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Trained VAE loaded from a model file.
pub struct SlModel {
    inner: VaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::Input(_) | Error::Range(_) => SlStatus::InvalidInput,
        Error::Shape(_) => SlStatus::Shape,
        Error::Parse(_) => SlStatus::Parse,
        Error::Validation(_) => SlStatus::Validation,
        Error::Numeric(_) => SlStatus::Numeric,
        Error::Domain(_) => SlStatus::Domain,
        Error::Io { .. } => SlStatus::Io,
        Error::Stage { source, .. } => status_of(source),
    }
}

enum Failure {
    Lib(Error),
    Status(SlStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail(status: SlStatus, msg: impl Into<String>) -> Failure {
    Failure::Status(status, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SlStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(SlStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SlStatus::InvalidInput, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(fail(SlStatus::NullPointer, format!("{what} is null")));
    }
    if len < needed {
        return Err(fail(
            SlStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(SlStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file; on success `*out` owns a handle for [`sl_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_model_load(path: *const c_char, out: *mut *mut SlModel) -> SlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = VaeModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SlModel { inner: model }));
        Ok(())
    })
}

/// Releases a handle from [`sl_model_load`]. NULL is ignored.
///
/// # Safety
/// `model` must come from `sl_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_model_free(model: *mut SlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input length expected by the encoder (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_model_input_dim(model: *const SlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Latent length produced by the encoder (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_model_latent_dim(model: *const SlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

unsafe fn encode_with(
    model: *const SlModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
    raw: bool,
) -> SlStatus {
    guard(|| {
        let m = &model
            .as_ref()
            .ok_or_else(|| fail(SlStatus::NullPointer, "model is null"))?
            .inner;
        let x = slice_arg(input, input_len, "input")?;
        let dst = out_slice(out, out_len, m.latent_dim(), "out")?;
        let z = if raw { m.encode_raw(x)? } else { m.encode_latent(x)? };
        dst.copy_from_slice(&z);
        Ok(())
    })
}

/// Posterior mean of an already-scaled input vector.
///
/// # Safety
/// `input` must hold `input_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_model_encode(
    model: *const SlModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    encode_with(model, input, input_len, out, out_len, false)
}

/// Posterior mean of a raw embedding, scaled with the model's stored scaler.
///
/// # Safety
/// `input` must hold `input_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_model_encode_raw(
    model: *const SlModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    encode_with(model, input, input_len, out, out_len, true)
}

/// Axial coordinates of the pointy-top hexagon containing `(lat, lon)`.
///
/// # Safety
/// `q` and `r` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_hex_index(lat: f64, lon: f64, edge: f64, q: *mut i64, r: *mut i64) -> SlStatus {
    guard(|| {
        let (q, r) = (out_ref(q, "q")?, out_ref(r, "r")?);
        let c = hex_index(lat, lon, edge)?;
        (*q, *r) = (c.q, c.r);
        Ok(())
    })
}

/// Centre of cell `(q, r)`.
///
/// # Safety
/// `lat` and `lon` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sl_hex_centroid(q: i64, r: i64, edge: f64, lat: *mut f64, lon: *mut f64) -> SlStatus {
    guard(|| {
        let (lat, lon) = (out_ref(lat, "lat")?, out_ref(lon, "lon")?);
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(fail(SlStatus::InvalidInput, format!("hex edge must be positive, got {edge}")));
        }
        (*lat, *lon) = hex_centroid(HexCoord::new(q, r), edge);
        Ok(())
    })
}

/// Cosine distance in `[0, 2]`; zero-norm vectors are a domain error.
///
/// # Safety
/// `x` and `y` must each hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sl_cosine_distance(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> SlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = cosine_distance(slice_arg(x, len, "x")?, slice_arg(y, len, "y")?)?;
        Ok(())
    })
}

/// Linear-interpolation percentile, `0 < percentile < 100`.
///
/// # Safety
/// `values` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sl_percentile(values: *const f64, len: usize, percentile: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = percentile_linear(slice_arg(values, len, "values")?.to_vec(), percentile)?;
        Ok(())
    })
}

/// Exact t-SNE with default settings. `points` is row-major `n × dim`;
/// `out` receives row-major `n × 2`.
///
/// # Safety
/// `points` must hold `n * dim` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_tsne(
    points: *const f64,
    n: usize,
    dim: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> SlStatus {
    guard(|| {
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| fail(SlStatus::InvalidInput, "n * dim overflows"))?;
        let x = slice_arg(points, len, "points")?;
        let dst = out_slice(out, out_len, 2 * n, "out")?;
        let arr = Array2::from_shape_vec((n, dim), x.to_vec()).map_err(|e| fail(SlStatus::Shape, e.to_string()))?;
        let cfg = TsneConfig {
            seed,
            ..TsneConfig::default()
        };
        let r = tsne(&arr, &cfg)?;
        dst.iter_mut().zip(r.embedding.iter()).for_each(|(d, s)| *d = *s);
        Ok(())
    })
}

/// Runs the full pipeline for a configuration file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sl_run_pipeline(config_path: *const c_char) -> SlStatus {
    guard(|| {
        let cfg = PipelineConfig::load(&path_arg(config_path)?)?;
        run_pipeline(&cfg)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_maps_nested_stage_errors() {
        let e = Error::Stage {
            stage: "train".into(),
            source: Box::new(Error::Numeric("nan".into())),
        };
        assert_eq!(status_of(&e), SlStatus::Numeric);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), SlStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sl_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
