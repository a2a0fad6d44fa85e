//! C ABI over `exges-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every function returns an [`ExgesStatus`]; on failure
//! the message is available from [`exges_last_error`] on the same thread.
//! Matrices are row-major `f64` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use exges_core::corpus::{load_base, MotionBase};
use exges_core::metrics;
use exges_core::numcore::Tensor;
use exges_core::pipeline::RunConfig;
use exges_core::retrieval::{locate_keyframe, retrieve_topk, RetrievalModel};
use exges_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExgesStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    MissingArtifact = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Motion base with precomputed embeddings.
pub struct ExgesBase(MotionBase);

/// Trained retrieval encoders.
pub struct ExgesRetrieval(RetrievalModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ExgesStatus {
    match e {
        Error::Shape(_) | Error::InvalidArgument(_) => ExgesStatus::InvalidArgument,
        Error::Config(_) => ExgesStatus::Config,
        Error::MissingArtifact { .. } => ExgesStatus::MissingArtifact,
        Error::NonFinite(_) | Error::Diverged { .. } => ExgesStatus::Numerical,
        Error::Io(_) => ExgesStatus::Io,
        Error::Format(_) | Error::Json(_) => ExgesStatus::Format,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ExgesStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            ExgesStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ExgesStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            ExgesStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn c_path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Tensor, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| Error::InvalidArgument(format!("{what} is too large")))?;
    Ok(Tensor::new(vec![rows, cols], std::slice::from_raw_parts(p, len).to_vec())?)
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn exges_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn exges_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an embedded motion base written by the `train-retrieval` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exges_base_load(path: *const c_char, out: *mut *mut ExgesBase) -> ExgesStatus {
    guard(|| {
        let dst = out_mut(out, "out")?;
        *dst = ptr::null_mut();
        let base = load_base(&c_path(path, "path")?)?;
        if base.embeddings().is_none() {
            return Err(Error::InvalidArgument("base has no embeddings".into()).into());
        }
        *dst = Box::into_raw(Box::new(ExgesBase(base)));
        Ok(())
    })
}

/// # Safety
/// `base` must come from [`exges_base_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn exges_base_free(base: *mut ExgesBase) {
    if !base.is_null() {
        drop(Box::from_raw(base));
    }
}

/// # Safety
/// `base` and `out_len` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn exges_base_len(base: *const ExgesBase, out_len: *mut usize) -> ExgesStatus {
    guard(|| {
        *out_mut(out_len, "out_len")? = nonnull(base, "base")?.0.len();
        Ok(())
    })
}

/// Loads retrieval encoders. `config_path` is the run config TOML the model
/// was trained with, or null for defaults.
///
/// # Safety
/// `model_path` must be a NUL-terminated string, `config_path` one or null,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exges_retrieval_load(
    model_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut ExgesRetrieval,
) -> ExgesStatus {
    guard(|| {
        let dst = out_mut(out, "out")?;
        *dst = ptr::null_mut();
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(&c_path(config_path, "config_path")?)?
        };
        let model = RetrievalModel::load(&c_path(model_path, "model_path")?, &cfg.retrieval)?;
        *dst = Box::into_raw(Box::new(ExgesRetrieval(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`exges_retrieval_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn exges_retrieval_free(model: *mut ExgesRetrieval) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Top-`k` base segments for a `frames × channels` audio window, best first.
/// Writes `min(k, base size)` entries and their count.
///
/// # Safety
/// `audio` must hold `frames * channels` values; `out_ids` and `out_scores`
/// must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn exges_retrieve_topk(
    model: *const ExgesRetrieval,
    base: *const ExgesBase,
    audio: *const f64,
    frames: usize,
    channels: usize,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> ExgesStatus {
    guard(|| {
        let (model, base) = (&nonnull(model, "model")?.0, &nonnull(base, "base")?.0);
        let audio = matrix(audio, frames, channels, "audio")?;
        if out_ids.is_null() || out_scores.is_null() {
            return Err(Fail::Null("out_ids/out_scores"));
        }
        let count = out_mut(out_count, "out_count")?;
        let q = model.audio_global(&[&audio])?;
        let hits = retrieve_topk(q.row(0), base, k)?;
        for (i, h) in hits.iter().enumerate() {
            *out_ids.add(i) = h.segment_id;
            *out_scores.add(i) = h.score;
        }
        *count = hits.len();
        Ok(())
    })
}

/// Frame of base segment `segment_id` that best matches the audio window.
///
/// # Safety
/// `audio` must hold `frames * channels` values; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn exges_locate_keyframe(
    model: *const ExgesRetrieval,
    base: *const ExgesBase,
    audio: *const f64,
    frames: usize,
    channels: usize,
    segment_id: u64,
    out_index: *mut usize,
    out_score: *mut f64,
) -> ExgesStatus {
    guard(|| {
        let (model, base) = (&nonnull(model, "model")?.0, &nonnull(base, "base")?.0);
        let audio = matrix(audio, frames, channels, "audio")?;
        let seg = base
            .segment(segment_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no segment {segment_id} in the base")))?;
        let kf = locate_keyframe(model, &audio, &seg.motion)?;
        *out_mut(out_index, "out_index")? = kf.index;
        *out_mut(out_score, "out_score")? = kf.score;
        Ok(())
    })
}

/// MPJPE in millimeters between `frames × (3 · joints)` pose matrices.
///
/// # Safety
/// `pred` and `gt` must hold `frames * joints * 3` values.
#[no_mangle]
pub unsafe extern "C" fn exges_mpjpe(
    pred: *const f64,
    gt: *const f64,
    frames: usize,
    joints: usize,
    out_mm: *mut f64,
) -> ExgesStatus {
    guard(|| {
        let cols = joints * 3;
        *out_mut(out_mm, "out_mm")? = metrics::mpjpe(&matrix(pred, frames, cols, "pred")?, &matrix(gt, frames, cols, "gt")?)?;
        Ok(())
    })
}

/// Per-frame Procrustes-aligned MPJPE in millimeters.
///
/// # Safety
/// `pred` and `gt` must hold `frames * joints * 3` values.
#[no_mangle]
pub unsafe extern "C" fn exges_pa_mpjpe(
    pred: *const f64,
    gt: *const f64,
    frames: usize,
    joints: usize,
    out_mm: *mut f64,
) -> ExgesStatus {
    guard(|| {
        let cols = joints * 3;
        *out_mut(out_mm, "out_mm")? =
            metrics::pa_mpjpe(&matrix(pred, frames, cols, "pred")?, &matrix(gt, frames, cols, "gt")?)?;
        Ok(())
    })
}

/// Fréchet distance between Gaussian fits of two `n × dim` feature sets.
///
/// # Safety
/// `generated` must hold `n_gen * dim` values and `reference` `n_ref * dim`.
#[no_mangle]
pub unsafe extern "C" fn exges_fgd(
    generated: *const f64,
    n_gen: usize,
    reference: *const f64,
    n_ref: usize,
    dim: usize,
    out_value: *mut f64,
) -> ExgesStatus {
    guard(|| {
        let g = matrix(generated, n_gen, dim, "generated")?;
        let r = matrix(reference, n_ref, dim, "reference")?;
        *out_mut(out_value, "out_value")? = metrics::fgd(&g, &r)?;
        Ok(())
    })
}
