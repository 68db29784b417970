//! C ABI over hopflow.
//!
//! Every fallible function returns an [`HfStatus`]; on failure the message is
//! available from [`hf_last_error`] on the same thread. Handles are opaque and
//! owned by the caller, who releases them with the matching `*_free`. Strings
//! returned through `char **` out-parameters are released with
//! [`hf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hopflow::dataset::{load_dataset, Dataset};
use hopflow::experiments::{export_embeddings, EmbeddingLayer};
use hopflow::graph::{normalize, NormMode};
use hopflow::hops::{load_hops, precompute_hops, save_hops, HopTensor};
use hopflow::model::{infer, load_checkpoint, save_checkpoint, Checkpoint};
use hopflow::train::{hops_for, protocol_splits, train, TrainConfig};
use hopflow::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, out-of-range value or bad config.
    InvalidArgument = 1,
    Io = 2,
    /// Malformed or corrupt file, or inconsistent data.
    Data = 3,
    /// Training diverged.
    Numeric = 4,
    /// Dimensions of the inputs do not fit together.
    Shape = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfNorm {
    Sym = 0,
    Row = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfLayer {
    /// Fused representation, `hidden` columns.
    Z = 0,
    /// Interaction output, `(hops + 1) * hidden` columns.
    Hk = 1,
}

/// Loaded dataset.
pub struct HfDataset {
    dir: PathBuf,
    inner: Dataset,
}

/// Pre-computed hop features.
pub struct HfHops {
    inner: HopTensor,
}

/// Trained model: configuration plus parameters.
pub struct HfModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> HfStatus {
    match e {
        Error::Io { .. } => HfStatus::Io,
        Error::InvalidArgument(_) | Error::Config(_) => HfStatus::InvalidArgument,
        Error::Numeric(_) => HfStatus::Numeric,
        Error::Shape(_) | Error::AllocationTooLarge { .. } => HfStatus::Shape,
        Error::Tape(_) => HfStatus::Internal,
        _ => HfStatus::Data,
    }
}

struct Fail(HfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            HfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = CString::new(s).map_err(|_| invalid("string holds NUL"))?.into_raw();
    Ok(())
}

unsafe fn write_f32s(src: &[f32], out: *mut f32, capacity: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output buffer is null"));
    }
    if capacity < src.len() {
        return Err(Fail(
            HfStatus::Shape,
            format!("output buffer holds {capacity} floats, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory (`edges.tsv`, `features.bin`, `labels.tsv`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_load(dir: *const c_char, out: *mut *mut HfDataset) -> HfStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let inner = load_dataset(&dir)?;
        put(out, HfDataset { dir, inner })
    })
}

/// # Safety
/// `ds` must come from [`hf_dataset_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_free(ds: *mut HfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes node, feature and class counts. Any out-pointer may be null.
///
/// # Safety
/// `ds` must be a live handle; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_shape(
    ds: *const HfDataset,
    num_nodes: *mut usize,
    num_features: *mut usize,
    num_classes: *mut usize,
) -> HfStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        for (p, v) in [
            (num_nodes, ds.num_nodes()),
            (num_features, ds.features.cols()),
            (num_classes, ds.labels.num_classes()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Propagates the dataset features over `num_hops` hops.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_hops_precompute(
    ds: *const HfDataset,
    num_hops: usize,
    norm: HfNorm,
    self_loops: bool,
    out: *mut *mut HfHops,
) -> HfStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let mode = match norm {
            HfNorm::Sym => NormMode::Sym,
            HfNorm::Row => NormMode::Row,
        };
        let a = normalize(&ds.graph, mode, self_loops);
        let inner = precompute_hops(&a, &ds.features, num_hops)?;
        put(out, HfHops { inner })
    })
}

/// Reads an HGH1 cache, verifying its checksum.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_hops_load(path: *const c_char, out: *mut *mut HfHops) -> HfStatus {
    guard(|| {
        let inner = load_hops(str_arg(path, "path")?)?;
        put(out, HfHops { inner })
    })
}

/// # Safety
/// `hops` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_hops_save(hops: *const HfHops, path: *const c_char) -> HfStatus {
    guard(|| Ok(save_hops(&handle(hops, "hops")?.inner, str_arg(path, "path")?)?))
}

/// Node count, tokens per node (`hops + 1`) and feature width. Any
/// out-pointer may be null.
///
/// # Safety
/// `hops` must be a live handle; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_hops_shape(
    hops: *const HfHops,
    num_nodes: *mut usize,
    num_tokens: *mut usize,
    dim: *mut usize,
) -> HfStatus {
    guard(|| {
        let h = &handle(hops, "hops")?.inner;
        for (p, v) in [(num_nodes, h.num_nodes()), (num_tokens, h.num_hops()), (dim, h.dim())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `hops` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hf_hops_free(hops: *mut HfHops) {
    if !hops.is_null() {
        drop(Box::from_raw(hops));
    }
}

/// Trains on split `split_index` of the dataset (shipped splits, else seeded
/// 48/32/20 splits). `config_json` is a TrainConfig document or null for the
/// defaults. On success `*model` holds the best checkpoint and, when `report`
/// is non-null, `*report` the run report as JSON.
///
/// # Safety
/// Handles must be live; `config_json` null or NUL-terminated; `model`
/// writable; `report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hf_train(
    ds: *const HfDataset,
    hops: *const HfHops,
    config_json: *const c_char,
    split_index: usize,
    model: *mut *mut HfModel,
    report: *mut *mut c_char,
) -> HfStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let hops = &handle(hops, "hops")?.inner;
        let cfg = if config_json.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        cfg.validate()?;
        let splits = protocol_splits(&ds.dir, &ds.inner, &cfg)?;
        let split = splits
            .get(split_index)
            .ok_or_else(|| invalid(format!("split {split_index} of {}", splits.len())))?;
        let outcome = train(hops, &ds.inner.labels, split, &cfg)?;
        if !report.is_null() {
            put_string(report, outcome.report.to_json())?;
        }
        put(
            model,
            HfModel {
                inner: outcome.checkpoint,
            },
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_load(path: *const c_char, out: *mut *mut HfModel) -> HfStatus {
    guard(|| {
        let inner = load_checkpoint(str_arg(path, "path")?)?;
        put(out, HfModel { inner })
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_model_save(model: *const HfModel, path: *const c_char) -> HfStatus {
    guard(|| Ok(save_checkpoint(&handle(model, "model")?.inner, str_arg(path, "path")?)?))
}

/// Model configuration as JSON.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_model_config(model: *const HfModel, out: *mut *mut c_char) -> HfStatus {
    guard(|| {
        let cfg = &handle(model, "model")?.inner.config;
        put_string(out, serde_json::to_string(cfg).expect("config serializes"))
    })
}

/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Eval-mode logits for `ids[0..num_ids]`, written row-major to `out`
/// (`num_ids * num_classes` floats, `capacity` available). A cache with more
/// hops than the model uses is truncated.
///
/// # Safety
/// Handles must be live; `ids` must hold `num_ids` values; `out` must hold
/// `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn hf_model_predict(
    model: *const HfModel,
    hops: *const HfHops,
    ids: *const usize,
    num_ids: usize,
    out: *mut f32,
    capacity: usize,
) -> HfStatus {
    guard(|| {
        let ck = &handle(model, "model")?.inner;
        let hops = &handle(hops, "hops")?.inner;
        if ids.is_null() && num_ids > 0 {
            return Err(invalid("ids is null"));
        }
        let ids = if num_ids == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(ids, num_ids)
        };
        if let Some(&bad) = ids.iter().find(|&&i| i >= hops.num_nodes()) {
            return Err(invalid(format!(
                "node id {bad} out of range for {} nodes",
                hops.num_nodes()
            )));
        }
        let hops = hops_for(hops, &ck.config)?;
        let res = infer(&ck.params, &ck.config, &hops, ids, 3000, false)?;
        write_f32s(&res.logits, out, capacity)
    })
}

/// Representations of every node, row-major into `out` (`num_nodes *
/// columns` floats, `capacity` available).
///
/// # Safety
/// Handles must be live; `out` must hold `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn hf_model_embeddings(
    model: *const HfModel,
    hops: *const HfHops,
    layer: HfLayer,
    out: *mut f32,
    capacity: usize,
) -> HfStatus {
    guard(|| {
        let ck = &handle(model, "model")?.inner;
        let hops = &handle(hops, "hops")?.inner;
        let layer = match layer {
            HfLayer::Z => EmbeddingLayer::Z,
            HfLayer::Hk => EmbeddingLayer::HK,
        };
        let m = export_embeddings(ck, hops, layer, 3000)?;
        write_f32s(m.data(), out, capacity)
    })
}
