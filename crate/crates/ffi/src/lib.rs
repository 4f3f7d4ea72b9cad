//! C ABI for `hte-core`.
//!
//! Every fallible function returns an [`HteStatus`]. On failure the message is
//! available from [`hte_last_error_message`] on the same thread until the next
//! call into the library. Handles are opaque, created by `*_new`/`*_read`/
//! `hte_estimate` style functions and released with the matching `*_free`.
//! Strings returned by accessors are owned by their handle and stay valid
//! until it is freed. Panics never cross the boundary; they map to
//! `HTE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hte_core::config::RunConfig;
use hte_core::harness::{run_estimate, EstimateOutput};
use hte_core::io::{read_dataset, ReadOptions};
use hte_core::model::{Dataset, Setup, UnitRecord};
use hte_core::simulate::simulate;
use hte_core::HteError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    OutOfRange = 3,
    Config = 4,
    Usage = 5,
    Parse = 6,
    Io = 7,
    Data = 8,
    Numerical = 9,
    Initialization = 10,
    Estimand = 11,
    Panic = 12,
}

/// Study design of a dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HteSetup {
    RctOneSided = 0,
    ObsMicro = 1,
    ObsMacro = 2,
}

impl From<HteSetup> for Setup {
    fn from(s: HteSetup) -> Self {
        match s {
            HteSetup::RctOneSided => Setup::RctOneSided,
            HteSetup::ObsMicro => Setup::ObsMicro,
            HteSetup::ObsMacro => Setup::ObsMacro,
        }
    }
}

/// Run configuration (JSON schema of the `hte` CLI).
pub struct HteConfig {
    inner: RunConfig,
}

/// Validated dataset.
pub struct HteDataset {
    inner: Dataset,
}

/// Result of one model fit.
pub struct HteFit {
    inner: EstimateOutput,
    names: Vec<CString>,
}

/// Mean, sd and equal-tailed 95% interval of a posterior quantity.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HteSummary {
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// One point of the HTE curve; `flagged` is 1 when the value is undefined (NaN).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HteCurvePoint {
    pub y0: f64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub flagged: i32,
}

/// Which average effect [`hte_fit_effect`] returns.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HteEffect {
    /// Average treatment effect (both models).
    Ate = 0,
    /// Effect on the treated (Gaussian model).
    Att = 1,
    /// Effect on the untreated (Gaussian model).
    Atu = 2,
    /// `E[y1 | y0 = 0]` (censored model).
    HteAtZero = 3,
}

struct Failure(HteStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &HteError) -> HteStatus {
    match e {
        HteError::Config(_) => HteStatus::Config,
        HteError::Usage(_) => HteStatus::Usage,
        HteError::Parse { .. } | HteError::Json(_) => HteStatus::Parse,
        HteError::Io(_) => HteStatus::Io,
        HteError::Data(_) | HteError::Shape { .. } | HteError::Domain(_) | HteError::Contract(_) => HteStatus::Data,
        HteError::Numerical { .. } | HteError::Diagnostic(_) | HteError::Rejection { .. } => HteStatus::Numerical,
        HteError::Initialization(_) => HteStatus::Initialization,
        HteError::Undefined(_) | HteError::SingularWeight { .. } | HteError::Separation(_) | HteError::WeakInstrument => {
            HteStatus::Estimand
        }
    }
}

impl From<HteError> for Failure {
    fn from(e: HteError) -> Self {
        Failure(status_of(&e), format!("{} [{}]", e, e.kind()))
    }
}

/// Runs `f`, records any failure or panic, and returns its status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HteStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HteStatus::Ok,
        Ok(Err(Failure(s, m))) => {
            set_last_error(&m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {m}"));
            HteStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HteStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(HteStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(null("output pointer"))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hte_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
///
/// The pointer is valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn hte_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default configuration: Gaussian model, marginal posterior.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_config_new_default(out: *mut *mut HteConfig) -> HteStatus {
    guard(|| write_out(out, HteConfig { inner: RunConfig::default() }))
}

/// Parses a JSON run configuration. Unknown keys are rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_config_from_json(json: *const c_char, out: *mut *mut HteConfig) -> HteStatus {
    guard(|| {
        let text = as_str(json, "json")?;
        write_out(out, HteConfig { inner: RunConfig::from_json(text)? })
    })
}

/// Sets the sampler length (total iterations per chain, including warmup).
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_config_set_iterations(
    config: *mut HteConfig,
    iterations: usize,
    warmup: usize,
    chains: usize,
) -> HteStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        let mut s = c.inner.sampler.clone();
        s.iterations = iterations;
        s.warmup = warmup;
        s.chains = chains;
        s.validate()?;
        c.inner.sampler = s;
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hte_config_free(config: *mut HteConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Reads a dataset CSV with header `id,r,z,y1,y0,x1..xd` (missing values `NA`).
///
/// `censored` nonzero rejects negative outcomes.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_read_csv(
    path: *const c_char,
    setup: HteSetup,
    censored: i32,
    out: *mut *mut HteDataset,
) -> HteStatus {
    guard(|| {
        let p = PathBuf::from(as_str(path, "path")?);
        let opts = ReadOptions { setup: setup.into(), censored: censored != 0, aux: None };
        write_out(out, HteDataset { inner: read_dataset(&p, &opts)? })
    })
}

/// Builds a dataset from column arrays of length `n`.
///
/// `r` is 0/1. `z` is 0/1 or -1 for missing. Missing outcomes are NaN.
/// `x` is row-major `n × d`. Ids are the 1-based row numbers.
///
/// # Safety
/// Each array must hold `n` elements (`n * d` for `x`); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_from_arrays(
    n: usize,
    d: usize,
    r: *const i32,
    z: *const i32,
    y1: *const f64,
    y0: *const f64,
    x: *const f64,
    setup: HteSetup,
    out: *mut *mut HteDataset,
) -> HteStatus {
    guard(|| {
        if n == 0 {
            return Err(Failure(HteStatus::OutOfRange, "n must be positive".into()));
        }
        for (p, what) in [(r.cast::<u8>(), "r"), (z.cast(), "z"), (y1.cast(), "y1"), (y0.cast(), "y0")] {
            if p.is_null() {
                return Err(null(what));
            }
        }
        if d > 0 && x.is_null() {
            return Err(null("x"));
        }
        let (r, z, y1, y0) = (
            std::slice::from_raw_parts(r, n),
            std::slice::from_raw_parts(z, n),
            std::slice::from_raw_parts(y1, n),
            std::slice::from_raw_parts(y0, n),
        );
        let x = if d > 0 { std::slice::from_raw_parts(x, n * d) } else { &[] };
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        let mut units = Vec::with_capacity(n);
        for i in 0..n {
            let bad = |what: &str| Failure(HteStatus::Data, format!("row {}: {what}", i + 1));
            let ri = match r[i] {
                0 => false,
                1 => true,
                _ => return Err(bad("r must be 0 or 1")),
            };
            let zi = match z[i] {
                -1 => None,
                0 => Some(false),
                1 => Some(true),
                _ => return Err(bad("z must be 0, 1 or -1")),
            };
            let u = UnitRecord {
                id: (i + 1).to_string(),
                x: x[i * d..(i + 1) * d].to_vec(),
                r: ri,
                z: zi,
                y1: opt(y1[i]),
                y0: opt(y0[i]),
            };
            u.validate().map_err(|e| bad(&e.to_string()))?;
            units.push(u);
        }
        write_out(out, HteDataset { inner: Dataset::new(units, d, setup.into(), None)? })
    })
}

/// Simulates a dataset from the configuration's design.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_simulate(config: *const HteConfig, seed: u64, out: *mut *mut HteDataset) -> HteStatus {
    guard(|| {
        let c = &as_ref(config, "config")?.inner;
        c.validate()?;
        let data = simulate(&c.dgp.simulation_config(c.model, seed))?;
        write_out(out, HteDataset { inner: data })
    })
}

/// Number of units.
///
/// # Safety
/// `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_len(data: *const HteDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.len())
}

/// Covariate dimension.
///
/// # Safety
/// `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_dim(data: *const HteDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.d)
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hte_dataset_free(data: *mut HteDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fits the configured model and target to `data`.
///
/// # Safety
/// `data` and `config` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_estimate(
    data: *const HteDataset,
    config: *const HteConfig,
    seed: u64,
    out: *mut *mut HteFit,
) -> HteStatus {
    guard(|| {
        let data = &as_ref(data, "data")?.inner;
        let cfg = &as_ref(config, "config")?.inner;
        check_out(out)?;
        let inner = run_estimate(data, cfg, seed)?;
        let names = inner
            .params
            .parameters
            .iter()
            .map(|p| CString::new(p.name.clone()).unwrap_or_default())
            .collect();
        write_out(out, HteFit { inner, names })
    })
}

/// Number of model parameters.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_param_count(fit: *const HteFit) -> usize {
    fit.as_ref().map_or(0, |f| f.names.len())
}

/// Name of parameter `index`, or null when out of range. Owned by `fit`.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_param_name(fit: *const HteFit, index: usize) -> *const c_char {
    fit.as_ref().and_then(|f| f.names.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

fn summary(s: &hte_core::estimands::EstimandSummary) -> HteSummary {
    HteSummary { mean: s.mean, sd: s.sd, lo95: s.ci95.0, hi95: s.ci95.1 }
}

/// Posterior summary of parameter `index`.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_param_summary(fit: *const HteFit, index: usize, out: *mut HteSummary) -> HteStatus {
    guard(|| {
        let f = as_ref(fit, "fit")?;
        check_out(out)?;
        let p = f.inner.params.parameters.get(index).ok_or_else(|| {
            Failure(HteStatus::OutOfRange, format!("parameter index {index} out of range ({})", f.names.len()))
        })?;
        *out = summary(&p.summary);
        Ok(())
    })
}

/// Posterior summary of an average effect.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_effect(fit: *const HteFit, effect: HteEffect, out: *mut HteSummary) -> HteStatus {
    guard(|| {
        let e = &as_ref(fit, "fit")?.inner.estimands;
        check_out(out)?;
        let s = match effect {
            HteEffect::Ate => e.posterior.as_ref().map(|p| p.ate).or(e.censored_ate),
            HteEffect::Att => e.posterior.as_ref().map(|p| p.att),
            HteEffect::Atu => e.posterior.as_ref().map(|p| p.atu),
            HteEffect::HteAtZero => e.hte_at_zero,
        };
        let s = s.ok_or_else(|| Failure(HteStatus::Estimand, format!("{effect:?} is not available for this model")))?;
        *out = summary(&s);
        Ok(())
    })
}

/// Number of HTE curve grid points.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_curve_len(fit: *const HteFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.curve.grid.len())
}

/// HTE curve point `index`.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_curve_point(fit: *const HteFit, index: usize, out: *mut HteCurvePoint) -> HteStatus {
    guard(|| {
        let c = &as_ref(fit, "fit")?.inner.curve;
        check_out(out)?;
        if index >= c.grid.len() {
            return Err(Failure(HteStatus::OutOfRange, format!("curve index {index} out of range ({})", c.grid.len())));
        }
        *out = HteCurvePoint {
            y0: c.grid[index],
            mean: c.mean[index],
            lo95: c.band95[index].0,
            hi95: c.band95[index].1,
            flagged: c.flagged[index] as i32,
        };
        Ok(())
    })
}

/// Writes params.json, estimands.json, hte_curve.csv and diagnostics.json to `dir`.
///
/// # Safety
/// `fit` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_write(fit: *const HteFit, dir: *const c_char) -> HteStatus {
    guard(|| {
        let f = as_ref(fit, "fit")?;
        let d = PathBuf::from(as_str(dir, "dir")?);
        f.inner.write(&d)?;
        Ok(())
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hte_fit_free(fit: *mut HteFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
