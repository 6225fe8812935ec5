//! C ABI for the flowalign library.
//!
//! Objects cross the boundary as opaque pointers created by `fa_*_new` /
//! `fa_*_load` and released by the matching `fa_*_free`. Every fallible call
//! returns an [`FaStatus`]; on failure the thread-local message is available
//! through [`fa_last_error_message`]. Panics never unwind into C: they are
//! caught and reported as `FA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use flowalign::config::RunConfig;
use flowalign::data::io::{load_dataset, save_dataset};
use flowalign::data::synthetic::{generate_synthetic, GeneratorConfig};
use flowalign::data::{normalize, DomainDataset, BYTE_GRID_LEN, TRACE_LEN};
use flowalign::ensemble::{TrackerEvent, ValleyConfig, ValleyTracker};
use flowalign::eval::{compute_metrics, run_experiment};
use flowalign::model::{init_model, ModelConfig, ParamVector};
use flowalign::training::evaluate;
use flowalign::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument or configuration value is out of range.
    InvalidArgument = 2,
    /// A file could not be read or written.
    Io = 3,
    /// Input data (dataset, checkpoint, capture) is malformed.
    Data = 4,
    /// Shape or layout mismatch between objects.
    Shape = 5,
    /// A computation produced a non-finite value.
    Numeric = 6,
    /// The caller's buffer is too small.
    BufferTooSmall = 7,
    /// An internal panic was caught.
    Panic = 8,
}

/// What a tracker observation did.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaTrackerEvent {
    None = 0,
    Converged = 1,
    Merged = 2,
    Stop = 3,
}

/// Model parameters together with their architecture.
pub struct FaModel {
    params: ParamVector,
}

pub struct FaDataset {
    inner: DomainDataset,
}

pub struct FaTracker {
    inner: ValleyTracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FaStatus {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InsufficientSamples(_) => FaStatus::InvalidArgument,
        Error::Shape(_) => FaStatus::Shape,
        Error::NonFinite(_) => FaStatus::Numeric,
        Error::Io { .. } => FaStatus::Io,
        Error::Pcap(_) | Error::Checkpoint { .. } | Error::Dataset { .. } | Error::Report(_) => FaStatus::Data,
    }
}

struct Failure(FaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: FaStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FaStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(FaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(FaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(FaStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(FaStatus::NullArgument, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(FaStatus::NullArgument, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(FaStatus::NullArgument, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn fa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn model_config(hidden_width: usize, repr_dim: usize, num_classes: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        byte_input_len: BYTE_GRID_LEN,
        size_trace_len: TRACE_LEN,
        interval_trace_len: TRACE_LEN,
        hidden_width,
        repr_dim,
        num_classes,
        seed,
    }
}

/// Creates a freshly initialized model for the standard flow features.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fa_model_new(
    hidden_width: usize,
    repr_dim: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut FaModel,
) -> FaStatus {
    guard(|| {
        let params = init_model(&model_config(hidden_width, repr_dim, num_classes, seed))?;
        write_out(out, FaModel { params })
    })
}

/// Loads a checkpoint written for the given architecture.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_load(
    path: *const c_char,
    hidden_width: usize,
    repr_dim: usize,
    num_classes: usize,
    out: *mut *mut FaModel,
) -> FaStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        let cfg = model_config(hidden_width, repr_dim, num_classes, 0);
        cfg.validate()?;
        let params = flowalign::checkpoint::load_params(&path, &cfg)?;
        write_out(out, FaModel { params })
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fa_model_save(model: *const FaModel, path: *const c_char) -> FaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let path = PathBuf::from(c_str(path, "path")?);
        flowalign::checkpoint::save_params(&path, &m.params)?;
        Ok(())
    })
}

/// Number of parameters; 0 for a null model.
///
/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_model_param_count(model: *const FaModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.len())
}

/// Copies the parameters into `buf`, which must hold exactly
/// `fa_model_param_count` values.
///
/// # Safety
/// `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fa_model_get_params(model: *const FaModel, buf: *mut f64, len: usize) -> FaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        if len != m.params.len() {
            return fail(FaStatus::BufferTooSmall, format!("need {} values, got {len}", m.params.len()));
        }
        slice_mut(buf, len, "buffer")?.copy_from_slice(m.params.values());
        Ok(())
    })
}

/// Replaces the parameters; values must be finite.
///
/// # Safety
/// `values` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fa_model_set_params(model: *mut FaModel, values: *const f64, len: usize) -> FaStatus {
    guard(|| {
        let m = borrow_mut(model, "model")?;
        if len != m.params.len() {
            return fail(FaStatus::Shape, format!("need {} values, got {len}", m.params.len()));
        }
        let v = slice(values, len, "values")?.to_vec();
        m.params = ParamVector::from_values(m.params.layout().clone(), v)?;
        Ok(())
    })
}

/// Predicts a class for every sample of `dataset` in domain order. `preds`
/// must hold `fa_dataset_len` entries.
///
/// # Safety
/// Pointers must come from this library; `preds` must be valid for `len`.
#[no_mangle]
pub unsafe extern "C" fn fa_model_predict(
    model: *const FaModel,
    dataset: *const FaDataset,
    preds: *mut usize,
    len: usize,
) -> FaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let ds = borrow(dataset, "dataset")?;
        if len != ds.inner.len() {
            return fail(FaStatus::BufferTooSmall, format!("need {} entries, got {len}", ds.inner.len()));
        }
        let samples: Vec<_> = ds.inner.samples().map(normalize).collect();
        let ev = evaluate(&m.params, &samples)?;
        slice_mut(preds, len, "predictions")?.copy_from_slice(&ev.predictions);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fa_model_free(model: *mut FaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_load(path: *const c_char, out: *mut *mut FaDataset) -> FaStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        let inner = load_dataset(&path)?;
        write_out(out, FaDataset { inner })
    })
}

/// Generates a synthetic shifted dataset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_generate(
    num_classes: usize,
    num_domains: usize,
    per_class_domain: usize,
    magnitude: f64,
    seed: u64,
    out: *mut *mut FaDataset,
) -> FaStatus {
    guard(|| {
        let inner = generate_synthetic(&GeneratorConfig {
            num_classes,
            num_domains,
            per_class_domain,
            magnitude,
            seed,
        })?;
        write_out(out, FaDataset { inner })
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_save(dataset: *const FaDataset, path: *const c_char) -> FaStatus {
    guard(|| {
        let ds = borrow(dataset, "dataset")?;
        save_dataset(PathBuf::from(c_str(path, "path")?), &ds.inner)?;
        Ok(())
    })
}

/// Total samples; 0 for null.
///
/// # Safety
/// `dataset` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_len(dataset: *const FaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `dataset` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_num_domains(dataset: *const FaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_domains())
}

/// # Safety
/// `dataset` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_num_classes(dataset: *const FaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_classes)
}

/// # Safety
/// `dataset` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fa_dataset_free(dataset: *mut FaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Creates an online valley tracker.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_new(
    converge_patience: usize,
    overfit_patience: usize,
    tolerance: f64,
    temperature: f64,
    max_epochs: usize,
    out: *mut *mut FaTracker,
) -> FaStatus {
    guard(|| {
        let inner = ValleyTracker::new(ValleyConfig {
            converge_patience,
            overfit_patience,
            tolerance,
            temperature,
            max_epochs,
        })?;
        write_out(out, FaTracker { inner })
    })
}

/// Feeds the model state after 1-based `epoch` with its validation loss.
///
/// # Safety
/// Pointers must come from this library; `event` may be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_observe(
    tracker: *mut FaTracker,
    epoch: usize,
    model: *const FaModel,
    val_loss: f64,
    event: *mut FaTrackerEvent,
) -> FaStatus {
    guard(|| {
        let t = borrow_mut(tracker, "tracker")?;
        let m = borrow(model, "model")?;
        let ev = t.inner.observe(epoch, Arc::new(m.params.clone()), val_loss)?;
        if !event.is_null() {
            *event = match ev {
                TrackerEvent::None => FaTrackerEvent::None,
                TrackerEvent::Converged { .. } => FaTrackerEvent::Converged,
                TrackerEvent::Merged { .. } => FaTrackerEvent::Merged,
                TrackerEvent::Stop => FaTrackerEvent::Stop,
            };
        }
        Ok(())
    })
}

/// Detected convergence epoch, or 0 while none.
///
/// # Safety
/// `tracker` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_converge_epoch(tracker: *const FaTracker) -> usize {
    tracker.as_ref().and_then(|t| t.inner.converge_epoch()).unwrap_or(0)
}

/// Number of checkpoints merged so far.
///
/// # Safety
/// `tracker` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_merged_count(tracker: *const FaTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.inner.merged_epochs().len())
}

/// Writes the merged parameters into `model` (same architecture).
///
/// # Safety
/// Pointers must come from this library.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_merged_into(tracker: *const FaTracker, model: *mut FaModel) -> FaStatus {
    guard(|| {
        let t = borrow(tracker, "tracker")?;
        let m = borrow_mut(model, "model")?;
        let merged = match t.inner.merged() {
            Some(p) => p,
            None => return fail(FaStatus::InvalidArgument, "nothing merged yet"),
        };
        if !merged.same_layout(&m.params) {
            return fail(FaStatus::Shape, "model architecture differs from the tracked one");
        }
        m.params = merged.clone();
        Ok(())
    })
}

/// # Safety
/// `tracker` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn fa_tracker_free(tracker: *mut FaTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Top-1 accuracy, one-vs-rest accuracy and weighted F1. Any output pointer
/// may be null.
///
/// # Safety
/// `predictions` and `labels` must be valid for `n` entries.
#[no_mangle]
pub unsafe extern "C" fn fa_metrics(
    predictions: *const usize,
    labels: *const usize,
    n: usize,
    num_classes: usize,
    accuracy: *mut f64,
    literal_accuracy: *mut f64,
    weighted_f1: *mut f64,
) -> FaStatus {
    guard(|| {
        let p = slice(predictions, n, "predictions")?;
        let y = slice(labels, n, "labels")?;
        let m = compute_metrics(p, y, num_classes)?;
        for (ptr, v) in [(accuracy, m.accuracy), (literal_accuracy, m.literal_accuracy), (weighted_f1, m.weighted_f1)] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        Ok(())
    })
}

/// Runs the cross-domain experiment described by a TOML configuration and
/// returns the JSON report in `*report_json`; release it with
/// [`fa_string_free`].
///
/// # Safety
/// `config_toml` must be NUL-terminated (may be empty); `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fa_experiment_run(
    config_toml: *const c_char,
    dataset: *const FaDataset,
    report_json: *mut *mut c_char,
) -> FaStatus {
    guard(|| {
        let text = if config_toml.is_null() { "" } else { c_str(config_toml, "config")? };
        let cfg = RunConfig::from_toml_str(text, &[])?;
        let ds = borrow(dataset, "dataset")?;
        if report_json.is_null() {
            return fail(FaStatus::NullArgument, "report pointer is null");
        }
        let report = run_experiment(&ds.inner, &cfg, 1, &mut |_| Ok(()))?;
        let json = CString::new(report.to_json()).expect("JSON has no NUL");
        *report_json = json.into_raw();
        Ok(())
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
