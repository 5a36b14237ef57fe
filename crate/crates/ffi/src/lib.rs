//! C ABI over `ncd-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_read`/`ncd_train` style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`NcdStatus`]; on failure [`ncd_last_error`] describes the
//! problem for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ncd_core::data::{generate_synthetic, read_dataset, write_dataset, Dataset};
use ncd_core::eval::{clustering_acc, hungarian, AssignmentProblem};
use ncd_core::model::ModelState;
use ncd_core::numerics::Rng;
use ncd_core::pairing::{agreement, WtaHasher};
use ncd_core::trainer::{evaluate, train, RunConfig};
use ncd_core::NcdError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Input = 3,
    Dimension = 4,
    Numeric = 5,
    Io = 6,
    Checkpoint = 7,
    Panic = 8,
}

pub struct NcdConfig(RunConfig);
pub struct NcdDataset(Dataset);
pub struct NcdModel {
    model: ModelState,
    config: RunConfig,
}
pub struct NcdWtaHasher(WtaHasher);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &NcdError) -> NcdStatus {
    match e {
        NcdError::Config(_) => NcdStatus::Config,
        NcdError::Input(_)
        | NcdError::Parse { .. }
        | NcdError::Batch(_)
        | NcdError::Sampling(_)
        | NcdError::Precondition(_) => NcdStatus::Input,
        NcdError::Dimension(_) => NcdStatus::Dimension,
        NcdError::Numeric(_) | NcdError::Degenerate(_) => NcdStatus::Numeric,
        NcdError::Io { .. } => NcdStatus::Io,
        NcdError::Checkpoint(_) => NcdStatus::Checkpoint,
    }
}

struct Fail(NcdStatus, String);

impl From<NcdError> for Fail {
    fn from(e: NcdError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NcdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            NcdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NcdStatus::Input, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ncd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ncd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default run configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncd_config_default(out: *mut *mut NcdConfig) -> NcdStatus {
    guard(|| {
        *out_arg(out, "out")? = boxed(NcdConfig(RunConfig::default()));
        Ok(())
    })
}

/// Parses and validates a JSON run configuration.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncd_config_from_json(
    json: *const c_char,
    out: *mut *mut NcdConfig,
) -> NcdStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        *out = boxed(NcdConfig(RunConfig::from_json(text)?));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ncd_config_free(cfg: *mut NcdConfig) {
    free(cfg)
}

/// Synthetic dataset described by the configuration.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncd_dataset_generate(
    cfg: *const NcdConfig,
    out: *mut *mut NcdDataset,
) -> NcdStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out_arg(out, "out")?;
        *out = boxed(NcdDataset(generate_synthetic(&cfg.0.synthetic)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ncd_dataset_read(
    path: *const c_char,
    out: *mut *mut NcdDataset,
) -> NcdStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = boxed(NcdDataset(read_dataset(&path)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ncd_dataset_write(
    ds: *const NcdDataset,
    path: *const c_char,
) -> NcdStatus {
    guard(|| {
        let ds = ref_arg(ds, "ds")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_dataset(&ds.0, &path)?;
        Ok(())
    })
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn ncd_dataset_len(ds: *const NcdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ncd_dataset_free(ds: *mut NcdDataset) {
    free(ds)
}

/// Trains a model; `final_acc` (optional) receives the last epoch's ACC.
///
/// # Safety
/// Handles must be live; `out` must be valid; `final_acc` may be null.
#[no_mangle]
pub unsafe extern "C" fn ncd_train(
    cfg: *const NcdConfig,
    ds: *const NcdDataset,
    out: *mut *mut NcdModel,
    final_acc: *mut f64,
) -> NcdStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let ds = ref_arg(ds, "ds")?;
        let out = out_arg(out, "out")?;
        let run = train(&cfg.0, &ds.0)?;
        if let Some(acc) = final_acc.as_mut() {
            *acc = run.final_acc().unwrap_or(f64::NAN);
        }
        *out = boxed(NcdModel {
            model: run.model,
            config: run.config,
        });
        Ok(())
    })
}

/// ACC of the model on the dataset's unlabelled records.
///
/// # Safety
/// Handles must be live and `acc` valid.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_eval(
    model: *const NcdModel,
    ds: *const NcdDataset,
    acc: *mut f64,
) -> NcdStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let ds = ref_arg(ds, "ds")?;
        let acc = out_arg(acc, "acc")?;
        *acc = evaluate(&m.model, &ds.0.eval_set()?)?;
        Ok(())
    })
}

/// Writes the checkpoint.
///
/// # Safety
/// `model` must be live and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_save(model: *const NcdModel, path: *const c_char) -> NcdStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        m.model.save(&path)?;
        Ok(())
    })
}

/// Loads a checkpoint whose shapes follow `cfg` resolved against `ds`.
///
/// # Safety
/// Handles must be live, `path` nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_load(
    cfg: *const NcdConfig,
    ds: *const NcdDataset,
    path: *const c_char,
    out: *mut *mut NcdModel,
) -> NcdStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let ds = ref_arg(ds, "ds")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let config = cfg.0.resolve(&ds.0)?;
        let model = ModelState::load(config.model_dims()?, &path)?;
        *out = boxed(NcdModel { model, config });
        Ok(())
    })
}

/// Cluster ids for `rows` inputs. `audio` may be null for single-modal
/// models; `labels` receives `rows` entries.
///
/// # Safety
/// Pointers must cover `rows * width` values of their modality.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_predict(
    model: *const NcdModel,
    visual: *const f64,
    audio: *const f64,
    rows: usize,
    labels: *mut usize,
) -> NcdStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let dims = *m.model.dims();
        let v = slice_arg(visual, rows * dims.d_v, "visual")?.to_vec();
        let xv = ncd_core::numerics::Tensor::new(vec![rows, dims.d_v], v)?;
        let xa = match (dims.d_a, audio.is_null()) {
            (Some(d), false) => Some(ncd_core::numerics::Tensor::new(
                vec![rows, d],
                slice_arg(audio, rows * d, "audio")?.to_vec(),
            )?),
            (Some(_), true) => return Err(null("audio")),
            (None, _) => None,
        };
        let pred = m.model.predict(&xv, xa.as_ref())?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        std::slice::from_raw_parts_mut(labels, rows).copy_from_slice(&pred);
        Ok(())
    })
}

/// Resolved configuration of a model as JSON. Writes at most `cap` bytes
/// including the terminator and stores the full length (without
/// terminator) in `needed`.
///
/// # Safety
/// `buf` must hold `cap` bytes or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_config_json(
    model: *const NcdModel,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> NcdStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let json = m.config.to_json();
        if let Some(n) = needed.as_mut() {
            *n = json.len();
        }
        if cap > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = json.len().min(cap - 1);
            ptr::copy_nonoverlapping(json.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ncd_model_free(model: *mut NcdModel) {
    free(model)
}

/// WTA hasher with `code_len` random permutations of `dim` entries.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ncd_wta_new(
    dim: usize,
    code_len: usize,
    window: usize,
    threshold: usize,
    seed: u64,
    out: *mut *mut NcdWtaHasher,
) -> NcdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let h = WtaHasher::build(dim, code_len, window, threshold, &mut Rng::new(seed))?;
        *out = boxed(NcdWtaHasher(h));
        Ok(())
    })
}

/// Hashes `dim` values into `code_len` symbols.
///
/// # Safety
/// `z` must hold `dim` values and `code` room for `code_len` symbols.
#[no_mangle]
pub unsafe extern "C" fn ncd_wta_hash(
    h: *const NcdWtaHasher,
    z: *const f64,
    dim: usize,
    code: *mut u32,
    code_len: usize,
) -> NcdStatus {
    guard(|| {
        let h = ref_arg(h, "hasher")?;
        if code_len != h.0.code_len() {
            return Err(Fail(
                NcdStatus::Dimension,
                format!(
                    "code buffer holds {code_len}, hasher emits {}",
                    h.0.code_len()
                ),
            ));
        }
        let z = slice_arg(z, dim, "z")?;
        let c = h.0.hash(z)?;
        if code.is_null() {
            return Err(null("code"));
        }
        std::slice::from_raw_parts_mut(code, code_len).copy_from_slice(&c.0);
        Ok(())
    })
}

/// Whether two vectors form a positive pair under the hasher's threshold.
///
/// # Safety
/// `a` and `b` must each hold `dim` values; `same` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ncd_wta_same(
    h: *const NcdWtaHasher,
    a: *const f64,
    b: *const f64,
    dim: usize,
    same: *mut bool,
) -> NcdStatus {
    guard(|| {
        let h = ref_arg(h, "hasher")?;
        let ca = h.0.hash(slice_arg(a, dim, "a")?)?;
        let cb = h.0.hash(slice_arg(b, dim, "b")?)?;
        *out_arg(same, "same")? = agreement(&ca, &cb)? >= h.0.threshold();
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ncd_wta_free(h: *mut NcdWtaHasher) {
    free(h)
}

/// Minimum-cost assignment of an `n x n` row-major cost matrix.
/// `perm[row]` receives the assigned column.
///
/// # Safety
/// `cost` must hold `n * n` values and `perm` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ncd_hungarian(
    cost: *const f64,
    n: usize,
    perm: *mut usize,
    total: *mut f64,
) -> NcdStatus {
    guard(|| {
        let cost = slice_arg(cost, n * n, "cost")?;
        let p = AssignmentProblem::from_flat(n, cost.to_vec())?;
        let (assign, t) = hungarian(&p);
        if perm.is_null() {
            return Err(null("perm"));
        }
        std::slice::from_raw_parts_mut(perm, n).copy_from_slice(&assign);
        if let Some(total) = total.as_mut() {
            *total = t;
        }
        Ok(())
    })
}

/// Clustering accuracy of `n` predictions over `num_classes` classes.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` values; `acc` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ncd_clustering_acc(
    y_true: *const usize,
    y_pred: *const usize,
    n: usize,
    num_classes: usize,
    acc: *mut f64,
) -> NcdStatus {
    guard(|| {
        let t = slice_arg(y_true, n, "y_true")?;
        let p = slice_arg(y_pred, n, "y_pred")?;
        *out_arg(acc, "acc")? = clustering_acc(t, p, num_classes)?.acc;
        Ok(())
    })
}
