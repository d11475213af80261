//! C interface to the AUC statistics and to archived models.
//!
//! Every fallible call returns an `MvStatus`. On failure a message is kept
//! for the calling thread and can be copied out with `mv_last_error`.
//! Handles (`MvScores`, `MvModel`) are opaque and freed by their `_free`
//! function; passing NULL to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mammoview::model::{load_archive, HeadSpec, Model, ModelError};
use mammoview::raster::Raster;
use mammoview::stats::{auc_report, delong_test, hanley_mcneil_se, z_test_correlated, DelongFlag, ScoreSet, StatsError};
use thiserror::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateLabels = 3,
    UnpairedScoreSets = 4,
    ZeroVariance = 5,
    Io = 6,
    Model = 7,
    Panic = 8,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("null pointer passed for `{0}`")]
    Null(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl FfiError {
    fn status(&self) -> MvStatus {
        match self {
            FfiError::Null(_) => MvStatus::NullPointer,
            FfiError::Invalid(_) => MvStatus::InvalidArgument,
            FfiError::Stats(StatsError::DegenerateLabels { .. }) => MvStatus::DegenerateLabels,
            FfiError::Stats(StatsError::UnpairedScoreSets(_)) => MvStatus::UnpairedScoreSets,
            FfiError::Stats(StatsError::ZeroVariance(_)) => MvStatus::ZeroVariance,
            FfiError::Stats(_) => MvStatus::InvalidArgument,
            FfiError::Model(ModelError::Archive { .. }) => MvStatus::Io,
            FfiError::Model(_) => MvStatus::Model,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> MvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MvStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            e.status()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MvStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, FfiError> {
    unsafe { p.as_mut() }.ok_or(FfiError::Null(name))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, FfiError> {
    unsafe { p.as_ref() }.ok_or(FfiError::Null(name))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &'static str) -> Result<&'a [T], FfiError> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

/// Crate version, NUL-terminated, static storage.
#[no_mangle]
pub extern "C" fn mv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full length including
/// the terminator, or 0 if the last call succeeded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Opaque set of scored cases.
pub struct MvScores(ScoreSet);

/// Opaque trained model loaded from an archive.
pub struct MvModel(Model);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MvAucReport {
    pub auc: f64,
    /// Hanley–McNeil standard error.
    pub se: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MvDelongResult {
    pub auc1: f64,
    pub auc2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
    /// Meaningful only when `z_defined`.
    pub z: f64,
    pub z_defined: bool,
    /// One-tailed, alternative AUC1 > AUC2.
    pub p_one_tailed: f64,
    /// The AUC difference has zero variance.
    pub zero_difference: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MvZTestResult {
    pub z: f64,
    pub se_diff: f64,
    pub p_one_tailed: f64,
}

/// Builds a score set from `n` probabilities and 0/1 labels. Case `i` is
/// identified by its index, so two sets pair up case by case.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mv_scores_new(scores: *const f64, labels: *const u8, n: usize, out: *mut *mut MvScores) -> MvStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = std::ptr::null_mut();
        let s = unsafe { slice(scores, n, "scores") }?;
        let l = unsafe { slice(labels, n, "labels") }?;
        let set = ScoreSet::from_scores(s.to_vec(), l.to_vec())?;
        *out = Box::into_raw(Box::new(MvScores(set)));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from `mv_scores_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mv_scores_free(s: *mut MvScores) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// # Safety
/// `s` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mv_auc_report(s: *const MvScores, out: *mut MvAucReport) -> MvStatus {
    guard(|| {
        let s = unsafe { in_ref(s, "scores") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let r = auc_report(&s.0)?;
        *out = MvAucReport { auc: r.auc, se: r.se, n_pos: r.n_pos, n_neg: r.n_neg };
        Ok(())
    })
}

/// Standard error of an AUC from its value and the class sizes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mv_hanley_mcneil_se(auc: f64, n_pos: usize, n_neg: usize, out: *mut f64) -> MvStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        if !(0.0..=1.0).contains(&auc) {
            return Err(FfiError::Invalid(format!("auc {auc} outside [0, 1]")));
        }
        if n_pos == 0 || n_neg == 0 {
            return Err(StatsError::DegenerateLabels { n_pos, n_neg }.into());
        }
        *out = hanley_mcneil_se(auc, n_pos, n_neg);
        Ok(())
    })
}

/// Paired DeLong test of two score sets over the same cases.
///
/// # Safety
/// `a` and `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mv_delong(a: *const MvScores, b: *const MvScores, out: *mut MvDelongResult) -> MvStatus {
    guard(|| {
        let a = unsafe { in_ref(a, "a") }?;
        let b = unsafe { in_ref(b, "b") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let d = delong_test(&a.0, &b.0)?;
        *out = MvDelongResult {
            auc1: d.auc1,
            auc2: d.auc2,
            var1: d.var1,
            var2: d.var2,
            cov: d.cov,
            z: d.z.unwrap_or(f64::NAN),
            z_defined: d.z.is_some(),
            p_one_tailed: d.p_one_tailed,
            zero_difference: d.flag == Some(DelongFlag::ZeroDifference),
        };
        Ok(())
    })
}

/// z-test on two AUCs from their standard errors and an assumed correlation.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mv_z_test(auc1: f64, se1: f64, auc2: f64, se2: f64, r: f64, out: *mut MvZTestResult) -> MvStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let t = z_test_correlated(auc1, se1, auc2, se2, r)?;
        *out = MvZTestResult { z: t.z, se_diff: t.se_diff, p_one_tailed: t.p_one_tailed };
        Ok(())
    })
}

/// Loads a `.safetensors` archive written by training (its `.json` sidecar
/// must sit next to it).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mv_model_load(path: *const c_char, out: *mut *mut MvModel) -> MvStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(FfiError::Null("path"));
        }
        let p = unsafe { CStr::from_ptr(path) }.to_str().map_err(|e| FfiError::Invalid(format!("path is not UTF-8: {e}")))?;
        let (model, _) = load_archive(Path::new(p))?;
        *out = Box::into_raw(Box::new(MvModel(model)));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from `mv_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mv_model_free(m: *mut MvModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Number of outputs: the class count for patch models, 1 otherwise.
///
/// # Safety
/// `m` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mv_model_n_classes(m: *const MvModel, out: *mut usize) -> MvStatus {
    guard(|| {
        let m = unsafe { in_ref(m, "model") }?;
        *unsafe { out_ref(out, "out") }? = m.0.n_classes();
        Ok(())
    })
}

unsafe fn raster(p: *const f32, height: usize, width: usize, name: &'static str) -> Result<Raster, FfiError> {
    if height == 0 || width == 0 {
        return Err(FfiError::Invalid(format!("{name}: empty image")));
    }
    let data = unsafe { slice(p, height * width, name) }?;
    Raster::from_vec(height, width, data.to_vec()).map_err(|e| FfiError::Invalid(e.to_string()))
}

fn expect_head(m: &MvModel, want: HeadSpec) -> Result<(), FfiError> {
    if std::mem::discriminant(&m.0.spec().head) != std::mem::discriminant(&want) {
        return Err(FfiError::Invalid(format!("model has a {:?}", m.0.spec().head)));
    }
    Ok(())
}

/// Malignancy probability of one view. `pixels` is row-major grayscale in
/// [0, 1]; any size at which the network stays valid is accepted.
///
/// # Safety
/// `pixels` must point to `height * width` floats; `m` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mv_model_predict(
    m: *const MvModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> MvStatus {
    guard(|| {
        let m = unsafe { in_ref(m, "model") }?;
        let out = unsafe { out_ref(out, "out") }?;
        expect_head(m, HeadSpec::WholeImageHead)?;
        let r = unsafe { raster(pixels, height, width, "pixels") }?;
        *out = m.0.predict_images(&[r])?[0];
        Ok(())
    })
}

/// Probability for one breast from its CC and MLO views (same size).
///
/// # Safety
/// `cc` and `mlo` must each point to `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn mv_model_predict_pair(
    m: *const MvModel,
    cc: *const f32,
    mlo: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> MvStatus {
    guard(|| {
        let m = unsafe { in_ref(m, "model") }?;
        let out = unsafe { out_ref(out, "out") }?;
        expect_head(m, HeadSpec::TwoViewHead)?;
        let a = unsafe { raster(cc, height, width, "cc") }?;
        let b = unsafe { raster(mlo, height, width, "mlo") }?;
        *out = m.0.predict_pairs(&[(a, b)])?[0];
        Ok(())
    })
}

/// Class probabilities of one patch into `probs[0..n_probs]`; `n_probs`
/// must equal `mv_model_n_classes`.
///
/// # Safety
/// `pixels` must point to `height * width` floats and `probs` to `n_probs`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mv_model_predict_patch(
    m: *const MvModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    probs: *mut f64,
    n_probs: usize,
) -> MvStatus {
    guard(|| {
        let m = unsafe { in_ref(m, "model") }?;
        expect_head(m, HeadSpec::PatchHead { n_classes: 0 })?;
        let k = m.0.n_classes();
        if n_probs != k {
            return Err(FfiError::Invalid(format!("model has {k} classes, buffer holds {n_probs}")));
        }
        if probs.is_null() {
            return Err(FfiError::Null("probs"));
        }
        let r = unsafe { raster(pixels, height, width, "pixels") }?;
        let p = m.0.predict_patches(&[r])?;
        let dst = unsafe { std::slice::from_raw_parts_mut(probs, k) };
        dst.copy_from_slice(&p[0]);
        Ok(())
    })
}
