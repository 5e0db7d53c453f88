//! C interface: parse a config, train a run, reopen a finished run and
//! classify feature-extractor inputs with it.
//!
//! Every handle is opaque and must be released with its `_free` function.
//! Functions return a [`DifaStatus`]; on failure
//! [`difa_last_error_message`] describes the error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use difa::adapt::infer;
use difa::autodiff::Tensor;
use difa::cli::{self, Datasets, Networks, RunOptions, RunSummary, TrainConfig};
use difa::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DifaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Validation = 4,
    Data = 5,
    Numeric = 6,
    Dependency = 7,
    Architecture = 8,
    Io = 9,
    Other = 10,
    Panic = 11,
}

impl From<&Error> for DifaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config { .. } => DifaStatus::Config,
            Error::Validation(_) => DifaStatus::Validation,
            Error::Numeric { .. } => DifaStatus::Numeric,
            Error::Dependency(_) => DifaStatus::Dependency,
            Error::Architecture(_) | Error::Dimension(_) => DifaStatus::Architecture,
            Error::Io { .. } => DifaStatus::Io,
            e if e.exit_code() == 3 => DifaStatus::Data,
            _ => DifaStatus::Other,
        }
    }
}

/// Parsed experiment configuration.
pub struct DifaConfig(TrainConfig);

/// Result record of a finished training run.
pub struct DifaSummary(RunSummary);

/// Trained networks of a run directory, ready for inference.
pub struct DifaModel {
    nets: Networks,
    data: Datasets,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DifaStatus, msg: impl Into<String>) -> DifaStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), DifaStatus>) -> DifaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DifaStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(DifaStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> DifaStatus {
    let chain = {
        let mut s = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(inner) = src {
            s.push_str(": ");
            s.push_str(&inner.to_string());
            src = inner.source();
        }
        s
    };
    fail(DifaStatus::from(&e), chain)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DifaStatus> {
    if p.is_null() {
        return Err(fail(DifaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DifaStatus::InvalidString, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, DifaStatus> {
    p.as_ref()
        .ok_or_else(|| fail(DifaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DifaStatus> {
    p.as_mut()
        .ok_or_else(|| fail(DifaStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), DifaStatus> {
    if out.is_null() {
        return Err(fail(DifaStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn owned_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("no interior nul")
        .into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn difa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn difa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn difa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a config file.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn difa_config_parse(
    path: *const c_char,
    out: *mut *mut DifaConfig,
) -> DifaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let cfg = cli::parse_config(Path::new(path)).map_err(lib_err)?;
        put(out, DifaConfig(cfg))
    })
}

/// Parses config text; relative paths resolve against `base_dir`.
///
/// # Safety
/// `text` and `base_dir` must be valid C strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_config_from_text(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut DifaConfig,
) -> DifaStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let base = str_arg(base_dir, "base_dir")?;
        let cfg = TrainConfig::from_text(text, Path::new(base)).map_err(lib_err)?;
        put(out, DifaConfig(cfg))
    })
}

/// Selects `source_only`, `ls_adda`, `di` or `difa`.
///
/// # Safety
/// `cfg` must be a live config handle and `variant` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn difa_config_set_variant(
    cfg: *mut DifaConfig,
    variant: *const c_char,
) -> DifaStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.0.variant = str_arg(variant, "variant")?.parse().map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn difa_config_set_seed(cfg: *mut DifaConfig, seed: u64) -> DifaStatus {
    guard(|| {
        handle_mut(cfg, "config")?.0.seed = seed;
        Ok(())
    })
}

/// Parent directory for run directories.
///
/// # Safety
/// `cfg` must be a live config handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn difa_config_set_out_dir(
    cfg: *mut DifaConfig,
    dir: *const c_char,
) -> DifaStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        handle_mut(cfg, "config")?.0.out_dir = dir;
        Ok(())
    })
}

/// Writes the config hash (64 hex digits) to `*out`; free it with
/// [`difa_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_config_hash(
    cfg: *const DifaConfig,
    out: *mut *mut c_char,
) -> DifaStatus {
    guard(|| {
        let cfg = handle(cfg, "config")?;
        if out.is_null() {
            return Err(fail(DifaStatus::NullPointer, "output pointer is null"));
        }
        *out = owned_string(&cfg.0.hash());
        Ok(())
    })
}

/// Writes the directory a run of this config uses to `*out`; free it with
/// [`difa_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_config_run_dir(
    cfg: *const DifaConfig,
    out: *mut *mut c_char,
) -> DifaStatus {
    guard(|| {
        let cfg = handle(cfg, "config")?;
        if out.is_null() {
            return Err(fail(DifaStatus::NullPointer, "output pointer is null"));
        }
        *out = owned_string(&cli::run_dir(&cfg.0).display().to_string());
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn difa_config_free(cfg: *mut DifaConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured pipeline and writes its run directory.
/// `eval_threads` 0 uses every core.
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_train(
    cfg: *const DifaConfig,
    resume: bool,
    eval_threads: usize,
    out: *mut *mut DifaSummary,
) -> DifaStatus {
    guard(|| {
        let cfg = handle(cfg, "config")?;
        let opts = RunOptions {
            resume,
            eval_threads: (eval_threads > 0).then_some(eval_threads),
        };
        let summary = cli::run(&cfg.0, &opts).map_err(lib_err)?;
        put(out, DifaSummary(summary))
    })
}

/// Reads `summary.json` from a run directory.
///
/// # Safety
/// `run_dir` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_summary_read(
    run_dir: *const c_char,
    out: *mut *mut DifaSummary,
) -> DifaStatus {
    guard(|| {
        let dir = str_arg(run_dir, "run_dir")?;
        let s = cli::read_summary(Path::new(dir)).map_err(lib_err)?;
        put(out, DifaSummary(s))
    })
}

/// Final target accuracy: mean and std over the evaluation window.
///
/// # Safety
/// `summary` must be a live handle; `mean` and `std` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_summary_final_target(
    summary: *const DifaSummary,
    mean: *mut f64,
    std: *mut f64,
) -> DifaStatus {
    guard(|| {
        let s = handle(summary, "summary")?;
        let mean = handle_mut(mean, "mean")?;
        let std = handle_mut(std, "std")?;
        *mean = s.0.final_target.mean;
        *std = s.0.final_target.std;
        Ok(())
    })
}

/// Target accuracy of the source-only classifier.
///
/// # Safety
/// `summary` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_summary_source_only_target(
    summary: *const DifaSummary,
    out: *mut f64,
) -> DifaStatus {
    guard(|| {
        *handle_mut(out, "out")? = handle(summary, "summary")?.0.source_only_target;
        Ok(())
    })
}

/// The whole summary as JSON; free it with [`difa_string_free`].
///
/// # Safety
/// `summary` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_summary_json(
    summary: *const DifaSummary,
    out: *mut *mut c_char,
) -> DifaStatus {
    guard(|| {
        let s = handle(summary, "summary")?;
        if out.is_null() {
            return Err(fail(DifaStatus::NullPointer, "output pointer is null"));
        }
        let json =
            serde_json::to_string(&s.0).map_err(|e| fail(DifaStatus::Other, e.to_string()))?;
        *out = owned_string(&json);
        Ok(())
    })
}

/// # Safety
/// `summary` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn difa_summary_free(summary: *mut DifaSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Loads the config, data shapes and checkpoints of a finished run.
///
/// # Safety
/// `run_dir` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn difa_model_open(
    run_dir: *const c_char,
    out: *mut *mut DifaModel,
) -> DifaStatus {
    guard(|| {
        let dir = str_arg(run_dir, "run_dir")?;
        let (_, data, nets) = cli::open_run(Path::new(dir)).map_err(lib_err)?;
        put(out, DifaModel { nets, data })
    })
}

/// Values per input row (`C·H·W`).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn difa_model_input_len(model: *const DifaModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.data.source.sample_shape().iter().product())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn difa_model_num_classes(model: *const DifaModel) -> usize {
    model.as_ref().map_or(0, |m| m.data.num_classes())
}

/// Classifies `rows` inputs of `cols` values each (row-major, values in
/// `[-1, 1]`) with the run's final encoder and `C`; writes one label per
/// row to `labels`.
///
/// # Safety
/// `model` must be a live handle, `inputs` must hold `rows * cols` floats
/// and `labels` room for `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn difa_model_predict(
    model: *const DifaModel,
    inputs: *const f32,
    rows: usize,
    cols: usize,
    labels: *mut u32,
) -> DifaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if rows == 0 {
            return Ok(());
        }
        if inputs.is_null() || labels.is_null() {
            return Err(fail(DifaStatus::NullPointer, "inputs or labels is null"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(DifaStatus::Validation, "rows * cols overflows"))?;
        let data = std::slice::from_raw_parts(inputs, n).to_vec();
        let x = Tensor::new(vec![rows, cols], data).map_err(lib_err)?;
        let pred = infer(m.nets.final_encoder(), &m.nets.c, &x).map_err(lib_err)?;
        let out = std::slice::from_raw_parts_mut(labels, rows);
        for (o, p) in out.iter_mut().zip(pred) {
            *o = p as u32;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn difa_model_free(model: *mut DifaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
