//! C ABI for the tstgan library.
//!
//! Every function returns a [`TstganStatus`]; 0 is success. Failure
//! details are kept in a thread-local message retrievable with
//! [`tstgan_last_error`]. Models are opaque handles created by
//! [`tstgan_model_load`] and released with [`tstgan_model_free`].
//!
//! The header `include/tstgan.h` is generated by cbindgen at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use tstgan::error::Error;
use tstgan::train::{self, LoadedCheckpoint, Trainer};

/// Result codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TstganStatus {
    Ok = 0,
    /// Invalid arguments or configuration.
    Usage = 1,
    /// Missing or malformed data, I/O failures, bad checkpoints.
    Data = 2,
    /// Non-finite losses or failed numerical checks.
    Numerical = 3,
    /// A null pointer where one is not allowed.
    NullPointer = 4,
    /// Internal panic; a bug, not a user error.
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> TstganStatus {
    match err.exit_code() {
        1 => TstganStatus::Usage,
        2 => TstganStatus::Data,
        _ => TstganStatus::Numerical,
    }
}

fn run(f: impl FnOnce() -> Result<(), (TstganStatus, String)>) -> TstganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TstganStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            TstganStatus::Panic
        }
    }
}

fn lift(err: Error) -> (TstganStatus, String) {
    (status_of(&err), err.to_string())
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, (TstganStatus, String)> {
    if ptr.is_null() {
        return Err((TstganStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (TstganStatus::Usage, "string argument is not UTF-8".into()))
}

/// Last error message for this thread, or null if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tstgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tstgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Generate the sines dataset and write it in the window CSV format.
///
/// # Safety
/// `out_path` must be a valid NUL-terminated path string.
#[no_mangle]
pub unsafe extern "C" fn tstgan_sines_generate(
    samples: usize,
    seq_len: usize,
    features: usize,
    seed: u64,
    out_path: *const c_char,
) -> TstganStatus {
    run(|| {
        let out = cstr(out_path)?;
        let ds =
            tstgan::data::generate_sines(samples, seq_len, features, 0.8, seed).map_err(lift)?;
        let all: Vec<usize> = (0..ds.n).collect();
        tstgan::data::export_synthetic(Path::new(out), &ds.batch_from_indices(&all)).map_err(lift)
    })
}

/// Train a model on a CSV dataset and write a checkpoint.
/// `config_json` may be null for defaults; it accepts the same keys as the
/// CLI `--config` file.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings (or null where
/// documented).
#[no_mangle]
pub unsafe extern "C" fn tstgan_train(
    data_path: *const c_char,
    config_json: *const c_char,
    out_ckpt: *const c_char,
) -> TstganStatus {
    run(|| {
        let data_path = cstr(data_path)?;
        let out = cstr(out_ckpt)?;
        let mut cfg = train::TrainConfig::with_features(1);
        if !config_json.is_null() {
            let text = cstr(config_json)?;
            apply_config_overrides(&mut cfg, text)?;
        }
        let ds = tstgan::data::load_windows_auto(
            Path::new(data_path),
            cfg.model.seq_len,
            0.8,
            cfg.seed,
            &[],
        )
        .map_err(lift)?;
        cfg.model.features = ds.features;
        cfg.model.noise_dim = ds.features;
        let mut trainer = Trainer::new(cfg).map_err(lift)?;
        let mut log = train::MetricsLog::sink();
        trainer.train(&ds, &mut log).map_err(lift)?;
        let state = trainer.rng_state();
        train::save_checkpoint(Path::new(out), &trainer.model, &trainer.cfg, &state).map_err(lift)
    })
}

fn apply_config_overrides(
    cfg: &mut train::TrainConfig,
    text: &str,
) -> Result<(), (TstganStatus, String)> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| (TstganStatus::Usage, format!("config json: {e}")))?;
    let obj = v.as_object().ok_or((
        TstganStatus::Usage,
        "config json must be an object".to_string(),
    ))?;
    for (key, val) in obj {
        let as_usize = || -> Result<usize, (TstganStatus, String)> {
            val.as_u64().map(|u| u as usize).ok_or((
                TstganStatus::Usage,
                format!("config key '{key}' must be an integer"),
            ))
        };
        let as_f64 = || -> Result<f64, (TstganStatus, String)> {
            val.as_f64().ok_or((
                TstganStatus::Usage,
                format!("config key '{key}' must be a number"),
            ))
        };
        match key.as_str() {
            "model_dim" => cfg.model.model_dim = as_usize()?,
            "heads" => cfg.model.heads = as_usize()?,
            "ff_hidden" => cfg.model.ff_hidden = as_usize()?,
            "layers" => cfg.model.layers = as_usize()?,
            "seq_len" => cfg.model.seq_len = as_usize()?,
            "noise_dim" => cfg.model.noise_dim = as_usize()?,
            "batch_size" => cfg.batch_size = as_usize()?,
            "stage1_steps" => cfg.stage1_steps = as_usize()?,
            "stage2_steps" => cfg.stage2_steps = as_usize()?,
            "joint_steps" => cfg.joint_steps = as_usize()?,
            "p_mask" => cfg.p_mask = as_f64()?,
            "lr_stage12" => cfg.lr_stage12 = as_f64()?,
            "lr_joint" => cfg.lr_joint = as_f64()?,
            "beta1" => cfg.beta1 = as_f64()?,
            "beta2" => cfg.beta2 = as_f64()?,
            "lambda_ml" => cfg.lambda_ml = as_f64()?,
            "seed" => {
                cfg.seed = val.as_u64().ok_or((
                    TstganStatus::Usage,
                    "config key 'seed' must be an unsigned integer".to_string(),
                ))?
            }
            "ablation" => {
                let flag = val.as_str().ok_or((
                    TstganStatus::Usage,
                    "config key 'ablation' must be a string".to_string(),
                ))?;
                cfg.ablation = tstgan::model::AblationMode::from_flag(flag).map_err(lift)?;
            }
            other => {
                return Err((
                    TstganStatus::Usage,
                    format!("unknown config key '{other}'"),
                ))
            }
        }
    }
    Ok(())
}

/// Opaque trained-model handle.
pub struct TstganModel {
    loaded: LoadedCheckpoint,
}

/// Load a checkpoint into an opaque handle. On success `*out` owns the
/// model and must be released with [`tstgan_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated path; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_load(
    path: *const c_char,
    out: *mut *mut TstganModel,
) -> TstganStatus {
    run(|| {
        if out.is_null() {
            return Err((TstganStatus::NullPointer, "null output handle".into()));
        }
        let path = cstr(path)?;
        let loaded = train::load_checkpoint(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(TstganModel { loaded }));
        Ok(())
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by
/// [`tstgan_model_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_free(model: *mut TstganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Data feature dimension of a loaded model, or 0 on null.
///
/// # Safety
/// `model` must be a live handle from [`tstgan_model_load`] or null.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_features(model: *const TstganModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).loaded.config.model.features
}

/// Sequence length of a loaded model, or 0 on null.
///
/// # Safety
/// `model` must be a live handle from [`tstgan_model_load`] or null.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_seq_len(model: *const TstganModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).loaded.config.model.seq_len
}

/// Sample `n` synthetic windows and write them as a window CSV.
///
/// # Safety
/// `model` must be a live handle; `out_path` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_synthesize(
    model: *const TstganModel,
    n: usize,
    seed: u64,
    out_path: *const c_char,
) -> TstganStatus {
    run(|| {
        if model.is_null() {
            return Err((TstganStatus::NullPointer, "null model handle".into()));
        }
        if n == 0 {
            return Err((TstganStatus::Usage, "n must be positive".into()));
        }
        let out = cstr(out_path)?;
        let batch = Trainer::synthesize(&(*model).loaded.model, n, seed).map_err(lift)?;
        tstgan::data::export_synthetic(Path::new(out), &batch).map_err(lift)
    })
}

/// Sample synthetic windows into a caller-provided buffer of
/// `n * seq_len * features` floats, row-major `[n, seq_len, features]`.
///
/// # Safety
/// `model` must be a live handle; `buffer` must point to at least
/// `buffer_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tstgan_model_synthesize_into(
    model: *const TstganModel,
    n: usize,
    seed: u64,
    buffer: *mut f32,
    buffer_len: usize,
) -> TstganStatus {
    run(|| {
        if model.is_null() || buffer.is_null() {
            return Err((TstganStatus::NullPointer, "null pointer argument".into()));
        }
        let m = &(*model).loaded.config.model;
        let needed = n * m.seq_len * m.features;
        if buffer_len < needed {
            return Err((
                TstganStatus::Usage,
                format!("buffer holds {buffer_len} floats, need {needed}"),
            ));
        }
        let batch = Trainer::synthesize(&(*model).loaded.model, n, seed).map_err(lift)?;
        std::ptr::copy_nonoverlapping(batch.data.as_ptr(), buffer, needed);
        Ok(())
    })
}

/// Predictive and discriminative scores of a synthetic window CSV against
/// a real dataset CSV; the JSON report is written to `out_json`.
///
/// # Safety
/// All paths must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tstgan_evaluate(
    real_path: *const c_char,
    synth_path: *const c_char,
    seq_len: usize,
    runs: usize,
    seed: u64,
    out_json: *const c_char,
) -> TstganStatus {
    run(|| {
        let real_path = cstr(real_path)?;
        let synth_path = cstr(synth_path)?;
        let out = cstr(out_json)?;
        if runs == 0 {
            return Err((TstganStatus::Usage, "runs must be positive".into()));
        }
        let real = tstgan::data::load_windows_auto(Path::new(real_path), seq_len, 0.8, seed, &[])
            .map_err(lift)?;
        let synth = tstgan::data::import_synthetic(Path::new(synth_path)).map_err(lift)?;
        let run_seeds: Vec<u64> = (0..runs as u64)
            .map(|r| tstgan::rng::derive_seed(seed, r))
            .collect();
        let posthoc = tstgan::eval::PosthocConfig::default();
        let all: Vec<usize> = (0..real.n).collect();
        let real_all = real.batch_from_indices(&all);
        let real_test = real.test_batchset();
        let predictive = tstgan::eval::predictive_score(&synth, &real_test, &run_seeds, &posthoc)
            .map_err(lift)?;
        let discriminative =
            tstgan::eval::discriminative_score(&real_all, &synth, &run_seeds, &posthoc)
                .map_err(lift)?;
        let report = serde_json::json!({
            "predictive": predictive,
            "discriminative": discriminative,
        });
        std::fs::write(out, serde_json::to_string_pretty(&report).unwrap())
            .map_err(|e| lift(Error::io(out.to_string(), e)))
    })
}

/// Run the finite-difference gradient suite; returns `Ok` only if every
/// primitive and composed path passes.
#[no_mangle]
pub extern "C" fn tstgan_gradcheck(probes: usize, seed: u64) -> TstganStatus {
    run(|| {
        let mut reports = tstgan::gradcheck::run_primitive_suite(seed, probes, None);
        reports.extend(tstgan::gradcheck::run_composite_suite(seed, probes));
        let failed: Vec<String> = reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.clone())
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err((
                TstganStatus::Numerical,
                format!("gradient checks failed: {}", failed.join(", ")),
            ))
        }
    })
}
