//! C ABI for `cutclust`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `cc_*_new`/`cc_*_load` function and released by the matching `cc_*_free`.
//! Fallible functions return a [`CcStatus`]; on failure the message is
//! available from [`cc_last_error`] on the same thread until the next call.
//!
//! Numeric codes 2, 3 and 4 coincide with the CLI exit codes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cutclust::expr::{load_matrix, ExpressionMatrix, MatrixFormat};
use cutclust::pipeline::{train, write_run_outputs, ClusterCount, RunConfig, RunResult};
use cutclust::{Error, ErrorKind};
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, or a buffer of the wrong length.
    InvalidArgument = 1,
    ConfigError = 2,
    DataError = 3,
    NumericalError = 4,
    /// A Rust panic was caught at the boundary.
    InternalError = 5,
}

/// Clustering quality against supplied ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

/// Opaque expression matrix.
pub struct CcMatrix(ExpressionMatrix);

/// Opaque run configuration.
pub struct CcConfig(RunConfig);

/// Opaque training result.
pub struct CcResult(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> CcStatus {
    match e.kind() {
        ErrorKind::Config => CcStatus::ConfigError,
        ErrorKind::Data => CcStatus::DataError,
        ErrorKind::Numerical => CcStatus::NumericalError,
    }
}

struct Fail(CcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(CcStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, translating errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal error: {msg}"));
            CcStatus::InternalError
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(invalid("output buffer is null"));
    }
    if len != src.len() {
        return Err(invalid(&format!("output buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next `cc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a cells × genes matrix from CSV or MatrixMarket (chosen by extension).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_matrix_load(path: *const c_char, out: *mut *mut CcMatrix) -> CcStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let m = load_matrix(&path, MatrixFormat::from_path(&path))?;
        out_arg(out, CcMatrix(m))
    })
}

/// Builds a raw count matrix from `n_cells * n_genes` row-major values.
///
/// # Safety
/// `data` must point to `n_cells * n_genes` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_matrix_from_dense(
    data: *const f64,
    n_cells: usize,
    n_genes: usize,
    out: *mut *mut CcMatrix,
) -> CcStatus {
    guard(|| {
        if data.is_null() {
            return Err(invalid("data is null"));
        }
        let len = n_cells.checked_mul(n_genes).ok_or_else(|| invalid("matrix size overflows"))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let values = Array2::from_shape_vec((n_cells, n_genes), values).map_err(|e| invalid(&e.to_string()))?;
        out_arg(out, CcMatrix(ExpressionMatrix::from_values(values)?))
    })
}

/// # Safety
/// `m` must be a live matrix handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn cc_matrix_shape(m: *const CcMatrix, n_cells: *mut usize, n_genes: *mut usize) -> CcStatus {
    guard(|| {
        let m = &ref_arg(m, "matrix")?.0;
        if let Some(n) = n_cells.as_mut() {
            *n = m.n_cells();
        }
        if let Some(g) = n_genes.as_mut() {
            *g = m.n_genes();
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_matrix_free(m: *mut CcMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Default configuration; never null.
#[no_mangle]
pub extern "C" fn cc_config_new() -> *mut CcConfig {
    Box::into_raw(Box::new(CcConfig(RunConfig::default())))
}

/// Parses a JSON configuration; unknown keys are rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_config_from_json(json: *const c_char, out: *mut *mut CcConfig) -> CcStatus {
    guard(|| {
        let cfg = RunConfig::from_json_str(str_arg(json, "json")?)?;
        out_arg(out, CcConfig(cfg))
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn cc_config_set_seed(cfg: *mut CcConfig, seed: u64) -> CcStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| invalid("config is null"))?.0.seed = seed;
        Ok(())
    })
}

/// Fixes the number of clusters; 0 means take it from the truth labels.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn cc_config_set_k(cfg: *mut CcConfig, k: usize) -> CcStatus {
    guard(|| {
        let c = &mut cfg.as_mut().ok_or_else(|| invalid("config is null"))?.0;
        c.k = if k == 0 { ClusterCount::FromLabels } else { ClusterCount::Fixed(k) };
        c.validate()?;
        Ok(())
    })
}

/// Resolved configuration as JSON. Free with [`cc_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_config_to_json(cfg: *const CcConfig, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let json = ref_arg(cfg, "config")?.0.to_json_pretty();
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out = CString::new(json).expect("json has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_config_free(cfg: *mut CcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Trains on `m`. `truth` may be null; otherwise it holds `truth_len`
/// labels, one per cell, and metrics become available on the result.
///
/// # Safety
/// `m` and `cfg` must be live handles, `truth` null or readable for
/// `truth_len` values, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_run(
    m: *const CcMatrix,
    cfg: *const CcConfig,
    truth: *const usize,
    truth_len: usize,
    out: *mut *mut CcResult,
) -> CcStatus {
    guard(|| {
        let m = &ref_arg(m, "matrix")?.0;
        let cfg = &ref_arg(cfg, "config")?.0;
        let truth = if truth.is_null() { None } else { Some(std::slice::from_raw_parts(truth, truth_len)) };
        cfg.validate()?;
        out_arg(out, CcResult(train(m, truth, cfg)?))
    })
}

/// # Safety
/// `r` must be a live result handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn cc_result_shape(
    r: *const CcResult,
    n_cells: *mut usize,
    k: *mut usize,
    embedding_dim: *mut usize,
) -> CcStatus {
    guard(|| {
        let r = &ref_arg(r, "result")?.0;
        if let Some(v) = n_cells.as_mut() {
            *v = r.labels.len();
        }
        if let Some(v) = k.as_mut() {
            *v = r.k;
        }
        if let Some(v) = embedding_dim.as_mut() {
            *v = r.embedding.ncols();
        }
        Ok(())
    })
}

/// Copies the hard cluster labels into `buf`, which must hold exactly `n_cells` values.
///
/// # Safety
/// `r` must be a live result handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cc_result_labels(r: *const CcResult, buf: *mut usize, len: usize) -> CcStatus {
    guard(|| copy_out(&ref_arg(r, "result")?.0.labels, buf, len))
}

/// Copies the row-major `n_cells × embedding_dim` embedding into `buf`.
///
/// # Safety
/// `r` must be a live result handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cc_result_embedding(r: *const CcResult, buf: *mut f64, len: usize) -> CcStatus {
    guard(|| {
        let e = &ref_arg(r, "result")?.0.embedding;
        let flat: Vec<f64> = e.iter().copied().collect();
        copy_out(&flat, buf, len)
    })
}

/// Copies the row-major `n_cells × k` soft assignments into `buf`.
///
/// # Safety
/// `r` must be a live result handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn cc_result_soft_assignments(r: *const CcResult, buf: *mut f64, len: usize) -> CcStatus {
    guard(|| {
        let q = &ref_arg(r, "result")?.0.q;
        let flat: Vec<f64> = q.iter().copied().collect();
        copy_out(&flat, buf, len)
    })
}

/// Metrics against the truth passed to [`cc_run`]. Fails with
/// `DataError` when the run had no truth labels.
///
/// # Safety
/// `r` must be a live result handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_result_metrics(r: *const CcResult, out: *mut CcMetrics) -> CcStatus {
    guard(|| {
        let r = &ref_arg(r, "result")?.0;
        let m = r.metrics.ok_or_else(|| Fail(CcStatus::DataError, "run had no truth labels".into()))?;
        let out = out.as_mut().ok_or_else(|| invalid("output pointer is null"))?;
        *out = CcMetrics { acc: m.acc, nmi: m.nmi, ari: m.ari };
        Ok(())
    })
}

/// Writes the same artifacts as the CLI `run` subcommand into `dir`.
///
/// # Safety
/// `r` must be a live result handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cc_result_write(r: *const CcResult, dir: *const c_char) -> CcStatus {
    guard(|| {
        let r = &ref_arg(r, "result")?.0;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        write_run_outputs(&dir, r)?;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_result_free(r: *mut CcResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
