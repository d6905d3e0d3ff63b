//! C ABI over the critlayer core.
//!
//! Objects cross the boundary as opaque handles that must be released with
//! the matching `*_free` function. Every fallible call returns a
//! [`ClStatus`]; on failure, [`cl_last_error_message`] describes the most
//! recent error on the calling thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use libc::c_char;

use critlayer::intervention::{clean_layer, CleanSpec};
use critlayer::repr_store::{read_bundle, write_bundle, ReprBundle, ReprMatrix};
use critlayer::similarity::{delta_curve, linear_cka_f64, pairwise_cka, rank_critical_layers, CkaMatrix, DeltaCurve};
use critlayer::stats::{spearman, RankedSeries};
use critlayer::Error;
use nalgebra::DMatrix;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    OutOfRange = 5,
    Degenerate = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A representation bundle.
pub struct ClBundle {
    inner: ReprBundle,
}

/// Pairwise CKA between all layers of a bundle.
pub struct ClCkaMatrix {
    inner: CkaMatrix,
}

/// Windowed mean CKA per layer.
pub struct ClDeltaCurve {
    inner: DeltaCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> ClStatus {
    match err {
        Error::Io { .. } => ClStatus::Io,
        Error::Json { .. }
        | Error::InvalidManifest(_)
        | Error::MissingLayerFile { .. }
        | Error::UnexpectedLayerFile { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::HeaderMismatch { .. }
        | Error::Truncated { .. } => ClStatus::Format,
        Error::OutOfRange { .. } | Error::TokenOutOfRange { .. } => ClStatus::OutOfRange,
        Error::ZeroVariance(_) | Error::DegenerateLayer(_) | Error::ZeroRankVariance(_) => ClStatus::Degenerate,
        Error::NonFinite { .. } | Error::Numeric(_) | Error::Diverged { .. } => ClStatus::Numeric,
        _ => ClStatus::InvalidArgument,
    }
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), (ClStatus, String)>) -> ClStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ClStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ClStatus::Panic
        }
    }
}

fn core(err: Error) -> (ClStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (ClStatus, String) {
    (ClStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(message: impl Into<String>) -> (ClStatus, String) {
    (ClStatus::InvalidArgument, message.into())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (ClStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn str_arg(p: *const c_char, what: &str) -> Result<String, (ClStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (ClStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ClStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (ClStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads and validates a bundle directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_read(path: *const c_char, out: *mut *mut ClBundle) -> ClStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = read_bundle(&path).map_err(core)?;
        write_out(out, Box::into_raw(Box::new(ClBundle { inner })), "out")
    })
}

/// Builds a bundle from `num_layers` row-major `num_samples x hidden_sizes[l]`
/// f32 buffers.
///
/// # Safety
/// `model_id` and `dataset_id` must be NUL-terminated strings.
/// `hidden_sizes` and `layers` must each hold `num_layers` entries, and
/// `layers[l]` must point to `num_samples * hidden_sizes[l]` floats.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_from_buffers(
    model_id: *const c_char,
    dataset_id: *const c_char,
    num_layers: usize,
    num_samples: usize,
    hidden_sizes: *const usize,
    layers: *const *const f32,
    out: *mut *mut ClBundle,
) -> ClStatus {
    guard(|| {
        let model_id = str_arg(model_id, "model_id")?;
        let dataset_id = str_arg(dataset_id, "dataset_id")?;
        let sizes = slice_arg(hidden_sizes, num_layers, "hidden_sizes")?;
        let ptrs = slice_arg(layers, num_layers, "layers")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut mats = Vec::with_capacity(num_layers);
        for (l, (&d, &p)) in sizes.iter().zip(ptrs).enumerate() {
            let len = num_samples.checked_mul(d).ok_or_else(|| invalid(format!("layer {l} is too large")))?;
            let data = slice_arg(p, len, "layer buffer")?.to_vec();
            mats.push(ReprMatrix::new(num_samples, d, data).map_err(core)?);
        }
        let inner = ReprBundle::from_layers(model_id, dataset_id, mats).map_err(core)?;
        write_out(out, Box::into_raw(Box::new(ClBundle { inner })), "out")
    })
}

/// Writes `bundle` to a directory, replacing an existing bundle there.
///
/// # Safety
/// `bundle` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_write(bundle: *const ClBundle, path: *const c_char) -> ClStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        let path = path_arg(path, "path")?;
        write_bundle(&bundle.inner, &path).map_err(core)
    })
}

/// # Safety
/// `bundle` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_num_layers(bundle: *const ClBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.inner.num_layers())
}

/// # Safety
/// `bundle` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_num_samples(bundle: *const ClBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.inner.num_samples())
}

/// Hidden size of `layer`, or 0 if the handle is NULL or the layer is out
/// of range.
///
/// # Safety
/// `bundle` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_hidden_size(bundle: *const ClBundle, layer: usize) -> usize {
    bundle
        .as_ref()
        .and_then(|b| b.inner.layers.get(layer))
        .map_or(0, |m| m.cols())
}

/// Writes the sha256 content hash (64 hex digits plus NUL) into `buf`.
///
/// # Safety
/// `bundle` must be a live handle; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_content_hash(bundle: *const ClBundle, buf: *mut c_char, capacity: usize) -> ClStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let hash = bundle.inner.content_hash();
        if capacity < hash.len() + 1 {
            return Err((ClStatus::BufferTooSmall, format!("need {} bytes, got {capacity}", hash.len() + 1)));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), buf, hash.len());
        buf.add(hash.len()).write(0);
        Ok(())
    })
}

/// # Safety
/// `bundle` must be a handle from this library, or NULL, and not freed before.
#[no_mangle]
pub unsafe extern "C" fn cl_bundle_free(bundle: *mut ClBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Removes the top `k` components from `layer` and writes the cleaned
/// bundle to `path`.
///
/// # Safety
/// `bundle` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cl_clean_and_write(bundle: *const ClBundle, layer: usize, k: usize, path: *const c_char) -> ClStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        let path = path_arg(path, "path")?;
        let cleaned = clean_layer(&bundle.inner, &CleanSpec::remove_topk(layer, k)).map_err(core)?;
        write_bundle(&cleaned, &path).map_err(core)
    })
}

/// Linear CKA between row-major `n x d1` and `n x d2` f64 matrices.
///
/// # Safety
/// `x1` must hold `n * d1` doubles, `x2` `n * d2`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_linear_cka(x1: *const f64, x2: *const f64, n: usize, d1: usize, d2: usize, out: *mut f64) -> ClStatus {
    guard(|| {
        let a = slice_arg(x1, n.saturating_mul(d1), "x1")?;
        let b = slice_arg(x2, n.saturating_mul(d2), "x2")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if n < 2 || d1 == 0 || d2 == 0 {
            return Err(invalid(format!("need n >= 2 and non-zero widths, got n = {n}, d1 = {d1}, d2 = {d2}")));
        }
        let v = linear_cka_f64(&DMatrix::from_row_slice(n, d1, a), &DMatrix::from_row_slice(n, d2, b)).map_err(core)?;
        write_out(out, v, "out")
    })
}

/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_pairwise_cka(bundle: *const ClBundle, out: *mut *mut ClCkaMatrix) -> ClStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = pairwise_cka(&bundle.inner).map_err(core)?;
        write_out(out, Box::into_raw(Box::new(ClCkaMatrix { inner })), "out")
    })
}

/// # Safety
/// `cka` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cl_cka_num_layers(cka: *const ClCkaMatrix) -> usize {
    cka.as_ref().map_or(0, |c| c.inner.num_layers)
}

/// # Safety
/// `cka` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_cka_get(cka: *const ClCkaMatrix, i: usize, j: usize, out: *mut f64) -> ClStatus {
    guard(|| {
        let cka = handle(cka, "cka")?;
        let n = cka.inner.num_layers;
        if i >= n || j >= n {
            return Err((ClStatus::OutOfRange, format!("index ({i}, {j}) outside {n}x{n}")));
        }
        write_out(out, cka.inner.get(i, j), "out")
    })
}

/// # Safety
/// `cka` must be a handle from this library, or NULL, and not freed before.
#[no_mangle]
pub unsafe extern "C" fn cl_cka_free(cka: *mut ClCkaMatrix) {
    if !cka.is_null() {
        drop(Box::from_raw(cka));
    }
}

/// # Safety
/// `cka` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_delta_curve(cka: *const ClCkaMatrix, k: usize, out: *mut *mut ClDeltaCurve) -> ClStatus {
    guard(|| {
        let cka = handle(cka, "cka")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = delta_curve(&cka.inner, k).map_err(core)?;
        write_out(out, Box::into_raw(Box::new(ClDeltaCurve { inner })), "out")
    })
}

/// # Safety
/// `curve` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cl_delta_len(curve: *const ClDeltaCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.inner.entries.len())
}

/// Layer and value of the `index`-th curve entry.
///
/// # Safety
/// `curve` must be a live handle; `layer` and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_delta_entry(curve: *const ClDeltaCurve, index: usize, layer: *mut usize, value: *mut f64) -> ClStatus {
    guard(|| {
        let curve = handle(curve, "curve")?;
        let e = curve
            .inner
            .entries
            .get(index)
            .ok_or_else(|| (ClStatus::OutOfRange, format!("entry {index} of {}", curve.inner.entries.len())))?;
        write_out(layer, e.layer, "layer")?;
        write_out(value, e.value, "value")
    })
}

/// # Safety
/// `curve` must be a live handle; `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_delta_valid_range(curve: *const ClDeltaCurve, lo: *mut usize, hi: *mut usize) -> ClStatus {
    guard(|| {
        let curve = handle(curve, "curve")?;
        write_out(lo, curve.inner.valid_range.0, "lo")?;
        write_out(hi, curve.inner.valid_range.1, "hi")
    })
}

/// Writes the `m` lowest-delta layers into `layers_out`.
///
/// # Safety
/// `curve` must be a live handle; `layers_out` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn cl_rank_critical_layers(curve: *const ClDeltaCurve, m: usize, layers_out: *mut usize, capacity: usize) -> ClStatus {
    guard(|| {
        let curve = handle(curve, "curve")?;
        if layers_out.is_null() {
            return Err(null("layers_out"));
        }
        if capacity < m {
            return Err((ClStatus::BufferTooSmall, format!("need {m} entries, got {capacity}")));
        }
        let layers = rank_critical_layers(&curve.inner, m).map_err(core)?;
        ptr::copy_nonoverlapping(layers.as_ptr(), layers_out, layers.len());
        Ok(())
    })
}

/// # Safety
/// `curve` must be a handle from this library, or NULL, and not freed before.
#[no_mangle]
pub unsafe extern "C" fn cl_delta_free(curve: *mut ClDeltaCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Spearman correlation of two series of length `n` sharing labels
/// `0..n`.
///
/// # Safety
/// `a` and `b` must each hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_spearman(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> ClStatus {
    guard(|| {
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        let labels: Vec<usize> = (0..n).collect();
        let sa = RankedSeries::new("a", labels.clone(), a.to_vec()).map_err(core)?;
        let sb = RankedSeries::new("b", labels, b.to_vec()).map_err(core)?;
        write_out(out, spearman(&sa, &sb).map_err(core)?, "out")
    })
}
