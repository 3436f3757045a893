//! C interface to gnnkit.
//!
//! Every fallible function returns a [`GnnkitStatus`]. On failure the message
//! is available from [`gnnkit_last_error`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `*_free` function. Strings returned through out-pointers are released with
//! [`gnnkit_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use gnnkit::bench::RunReport;
use gnnkit::checkpoint::{self, Checkpoint};
use gnnkit::config::{preset, RunConfig};
use gnnkit::data::{load_dataset, Dataset};
use gnnkit::layers::Propagation;
use gnnkit::model::{model_forward, predict};
use gnnkit::tensor::{Matrix, Mode};
use gnnkit::train::{evaluate, run_seeds, MultiSeedResult};
use gnnkit::Error;

/// Result codes. Nonzero values match the `gnnkit` command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnnkitStatus {
    Ok = 0,
    /// Null argument, invalid UTF-8, or an internal panic.
    Internal = 1,
    /// Invalid configuration, malformed or inconsistent data.
    Input = 2,
    Divergence = 3,
    Io = 4,
}

/// A loaded dataset.
pub struct GnnkitDataset {
    inner: Dataset,
}

/// Model configuration and trained parameters.
pub struct GnnkitModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Lib(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

fn internal(msg: impl Into<String>) -> Failure {
    Failure::Internal(msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GnnkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnnkitStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            match e.exit_code() {
                3 => GnnkitStatus::Divergence,
                4 => GnnkitStatus::Io,
                _ => GnnkitStatus::Input,
            }
        }
        Ok(Err(Failure::Internal(msg))) => {
            set_error(&msg);
            GnnkitStatus::Internal
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {msg}"));
            GnnkitStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(internal(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| internal(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| internal(format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(internal(format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| internal("string contains a NUL byte"))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next gnnkit call on this thread.
#[no_mangle]
pub extern "C" fn gnnkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gnnkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_dataset_load(path: *const c_char, out: *mut *mut GnnkitDataset) -> GnnkitStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let inner = load_dataset(path)?;
        *out = Box::into_raw(Box::new(GnnkitDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`gnnkit_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_dataset_free(ds: *mut GnnkitDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_dataset_num_nodes(ds: *const GnnkitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_nodes())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_dataset_feature_dim(ds: *const GnnkitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.feature_dim())
}

/// Class count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_dataset_num_classes(ds: *const GnnkitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_classes())
}

/// Run configuration JSON for a named preset applied to `ds`, with seeds
/// `seed .. seed + seeds`. Free the result with [`gnnkit_string_free`].
///
/// # Safety
/// `ds` must be a live handle, `name` a NUL-terminated string, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_preset_config(
    ds: *const GnnkitDataset,
    name: *const c_char,
    seed: u64,
    seeds: usize,
    out_json: *mut *mut c_char,
) -> GnnkitStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let ds = &ref_arg(ds, "dataset")?.inner;
        let cfg = preset(str_arg(name, "name")?)?.resolve(ds, seed, seeds);
        *out_json = into_c_string(serde_json::to_string_pretty(&cfg)?)?;
        Ok(())
    })
}

/// Trains every seed of the run configuration `config_json` on `ds`.
///
/// `out_model` receives the best-validation parameters of the first seed.
/// `out_report`, when not null, receives the run report JSON.
///
/// # Safety
/// `ds` must be a live handle, `config_json` a NUL-terminated string,
/// `out_model` writable and `out_report` writable or null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_train(
    ds: *const GnnkitDataset,
    config_json: *const c_char,
    out_model: *mut *mut GnnkitModel,
    out_report: *mut *mut c_char,
) -> GnnkitStatus {
    guard(|| {
        out_arg(out_model, "out_model")?;
        let ds = &ref_arg(ds, "dataset")?.inner;
        let cfg: RunConfig = serde_json::from_str(str_arg(config_json, "config_json")?)?;
        let cfg = cfg.for_dataset(ds);
        cfg.validate()?;
        let ds = ds.clone().with_feature_norm(cfg.feature_norm);
        let start = Instant::now();
        let mut outputs = run_seeds(&ds, &cfg.model, &cfg.train, cfg.seeds)?;
        let result = MultiSeedResult::from_runs(outputs.iter().map(|o| o.result.clone()).collect());
        if !out_report.is_null() {
            let report = RunReport::new(&ds, &cfg, &result, start.elapsed().as_secs_f64());
            *out_report = into_c_string(serde_json::to_string_pretty(&report)?)?;
        }
        let inner = Checkpoint {
            model: cfg.model,
            feature_norm: cfg.feature_norm,
            params: outputs.swap_remove(0).params,
        };
        *out_model = Box::into_raw(Box::new(GnnkitModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_model_load(path: *const c_char, out: *mut *mut GnnkitModel) -> GnnkitStatus {
    guard(|| {
        out_arg(out, "out")?;
        let inner = checkpoint::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GnnkitModel { inner }));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_model_save(model: *const GnnkitModel, path: *const c_char) -> GnnkitStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        checkpoint::save(str_arg(path, "path")?, &model.inner)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_model_free(model: *mut GnnkitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn logits(ck: &Checkpoint, ds: &Dataset) -> Result<(Dataset, Matrix<f32>), Failure> {
    if ck.model.input_dim != ds.feature_dim() || ck.model.num_classes != ds.head_dim() {
        return Err(Error::input(format!(
            "model expects {} features and {} outputs; dataset has {} and {}",
            ck.model.input_dim,
            ck.model.num_classes,
            ds.feature_dim(),
            ds.head_dim()
        ))
        .into());
    }
    let ds = ds.clone().with_feature_norm(ck.feature_norm);
    let prop = Propagation::new(ck.model.kind, ds.graph())?;
    let z = model_forward(
        &ck.params,
        &ck.model,
        &prop,
        ds.features(),
        Mode::Eval,
        &mut rand::thread_rng(),
    )?;
    Ok((ds, z))
}

/// Writes the predicted class of every node into `out[0 .. len]`;
/// `len` must equal the node count.
///
/// # Safety
/// `model` and `ds` must be live handles; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_model_predict(
    model: *const GnnkitModel,
    ds: *const GnnkitDataset,
    out: *mut u32,
    len: usize,
) -> GnnkitStatus {
    guard(|| {
        let ck = &ref_arg(model, "model")?.inner;
        let ds = &ref_arg(ds, "dataset")?.inner;
        out_arg(out, "out")?;
        if len != ds.num_nodes() {
            return Err(Error::input(format!("buffer holds {len} values for {} nodes", ds.num_nodes())).into());
        }
        let (_, z) = logits(ck, ds)?;
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, p) in dst.iter_mut().zip(predict(&z)) {
            *d = p as u32;
        }
        Ok(())
    })
}

/// Dataset metric (accuracy or ROC-AUC) on the train, validation and test
/// splits. Any out-pointer may be null.
///
/// # Safety
/// `model` and `ds` must be live handles; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnnkit_model_evaluate(
    model: *const GnnkitModel,
    ds: *const GnnkitDataset,
    out_train: *mut f64,
    out_val: *mut f64,
    out_test: *mut f64,
) -> GnnkitStatus {
    guard(|| {
        let ck = &ref_arg(model, "model")?.inner;
        let ds = &ref_arg(ds, "dataset")?.inner;
        let (ds, z) = logits(ck, ds)?;
        let s = ds.split();
        for (out, idx) in [(out_train, &s.train), (out_val, &s.val), (out_test, &s.test)] {
            if !out.is_null() {
                *out = evaluate(&z, ds.labels(), idx, ds.metric())?;
            }
        }
        Ok(())
    })
}

/// Clears the thread's last error message.
#[no_mangle]
pub extern "C" fn gnnkit_clear_error() {
    set_error("");
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_arguments_are_internal_errors() {
        unsafe {
            let mut ds = ptr::null_mut();
            assert_eq!(gnnkit_dataset_load(ptr::null(), &mut ds), GnnkitStatus::Internal);
            assert!(ds.is_null());
            let msg = CStr::from_ptr(gnnkit_last_error()).to_str().unwrap();
            assert!(msg.contains("path is null"));
            assert_eq!(gnnkit_dataset_num_nodes(ptr::null()), 0);
            gnnkit_dataset_free(ptr::null_mut());
            gnnkit_model_free(ptr::null_mut());
            gnnkit_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn missing_directory_is_io() {
        let path = CString::new("/nonexistent/gnnkit").unwrap();
        let mut ds = ptr::null_mut();
        let status = unsafe { gnnkit_dataset_load(path.as_ptr(), &mut ds) };
        assert_eq!(status, GnnkitStatus::Io);
        gnnkit_clear_error();
        assert_eq!(unsafe { CStr::from_ptr(gnnkit_last_error()) }.to_bytes(), b"");
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(gnnkit_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
