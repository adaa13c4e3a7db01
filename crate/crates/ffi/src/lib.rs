//! C ABI over the `hetlmf` core.
//!
//! Conventions: every fallible function returns a [`HetlmfStatus`] and writes
//! results through out-pointers. On failure a message is kept per thread and
//! can be read with [`hetlmf_last_error_message`]. Handles are opaque and must
//! be released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use hetlmf::cli::config::ExperimentConfig;
use hetlmf::distributions::MetaorderLaw;
use hetlmf::engine::{InitMode, Population, Simulator};
use hetlmf::error::Error;
use hetlmf::stats::acf_estimate;
use hetlmf::theory::{exact_acf_market, exponential_acf_closed_form, lower_bound_pt_count, prefactor_bounds};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetlmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed or invalid configuration JSON.
    ConfigError = 3,
    /// Law, population or argument outside the model's domain.
    InvalidArgument = 4,
    /// A numerical or estimation step failed.
    NumericalError = 5,
    /// The operation does not support the given law or size.
    Unsupported = 6,
    IoError = 7,
    /// A Rust panic was caught; the message holds its payload.
    Panic = 8,
}

/// Law family for [`hetlmf_population_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetlmfLawKind {
    /// Single-order metaorders (random trader); parameter ignored.
    Degenerate = 0,
    /// Geometric lengths; parameter is the decay length.
    Exponential = 1,
    /// Discrete Pareto lengths; parameter is the tail exponent.
    Pareto = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HetlmfLaw {
    pub kind: HetlmfLawKind,
    pub parameter: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetlmfInitMode {
    Stationary = 0,
    FreshDraw = 1,
}

/// Scalar part of a prefactor report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HetlmfPrefactorReport {
    pub alpha: f64,
    pub mu: f64,
    pub m_pt: usize,
    pub c0_sk: f64,
    pub c0_lmf: f64,
    pub c0_upper: f64,
    pub q0_sk: f64,
    pub q0_bbdg: f64,
    pub q0_upper: f64,
    pub ratio: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
}

/// Opaque trader population.
pub struct HetlmfPopulation {
    inner: Population,
}

/// Opaque running simulation. Owns a private copy of its population.
pub struct HetlmfSimulator {
    // Borrows `*population`; cleared first in `Drop`.
    sim: Option<Simulator<'static>>,
    population: *mut Population,
}

impl Drop for HetlmfSimulator {
    fn drop(&mut self) {
        self.sim = None;
        // SAFETY: `population` came from `Box::into_raw` in `hetlmf_simulator_new`
        // and the only borrower was dropped just above.
        unsafe { drop(Box::from_raw(self.population)) };
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HetlmfStatus {
    match e {
        Error::Config { .. } | Error::Json(_) => HetlmfStatus::ConfigError,
        Error::Io(_) => HetlmfStatus::IoError,
        Error::UnsupportedLaw(_) | Error::StateSpaceTooLarge { .. } => HetlmfStatus::Unsupported,
        Error::Numerical(_) | Error::SeriesTooShort { .. } | Error::InsufficientPoints { .. } | Error::EmptyLog | Error::InequalityViolation(_) => {
            HetlmfStatus::NumericalError
        }
        _ => HetlmfStatus::InvalidArgument,
    }
}

enum Failure {
    Status(HetlmfStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(HetlmfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HetlmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            HetlmfStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HetlmfStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure::Status(HetlmfStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hetlmf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hetlmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a population from an experiment-config JSON document (its `groups`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_population_from_config_json(
    json: *const c_char,
    out: *mut *mut HetlmfPopulation,
) -> HetlmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let built = ExperimentConfig::from_json(text)?.build_population()?;
        *out = Box::into_raw(Box::new(HetlmfPopulation {
            inner: built.population,
        }));
        Ok(())
    })
}

/// Builds a population from `n` intensities and laws; intensities are rescaled to sum to one.
///
/// # Safety
/// `intensities` and `laws` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_population_new(
    intensities: *const f64,
    laws: *const HetlmfLaw,
    n: usize,
    out: *mut *mut HetlmfPopulation,
) -> HetlmfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let lam = read_slice(intensities, n, "intensities")?;
        let laws = read_slice(laws, n, "laws")?;
        let members = lam
            .iter()
            .zip(laws)
            .map(|(&l, law)| {
                let law = match law.kind {
                    HetlmfLawKind::Degenerate => MetaorderLaw::Degenerate,
                    HetlmfLawKind::Exponential => MetaorderLaw::exponential(law.parameter)?,
                    HetlmfLawKind::Pareto => MetaorderLaw::pareto(law.parameter)?,
                };
                Ok((l, law))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        *out = Box::into_raw(Box::new(HetlmfPopulation {
            inner: Population::new(members)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `population` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_population_free(population: *mut HetlmfPopulation) {
    if !population.is_null() {
        drop(Box::from_raw(population));
    }
}

/// Number of traders, or 0 for a null handle.
///
/// # Safety
/// `population` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_population_len(population: *const HetlmfPopulation) -> usize {
    population.as_ref().map_or(0, |p| p.inner.len())
}

/// Copies the (rescaled) intensities into `out[0..n]`, `n` = population length.
///
/// # Safety
/// `population` must be a live handle and `out` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_population_intensities(
    population: *const HetlmfPopulation,
    out: *mut f64,
    n: usize,
) -> HetlmfStatus {
    guard(|| {
        let p = population.as_ref().ok_or_else(|| null("population"))?;
        if n != p.inner.len() {
            return Err(Failure::Status(
                HetlmfStatus::InvalidArgument,
                format!("buffer holds {n} values, population has {}", p.inner.len()),
            ));
        }
        write_slice(out, n, "out")?.copy_from_slice(&p.inner.intensities());
        Ok(())
    })
}

/// Exact stationary market ACF at `n_lags` lags (each >= 1), written to `out`.
///
/// # Safety
/// `lags` must hold `n_lags` readable values and `out` room for as many.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_exact_acf(
    population: *const HetlmfPopulation,
    lags: *const u64,
    n_lags: usize,
    out: *mut f64,
) -> HetlmfStatus {
    guard(|| {
        let p = population.as_ref().ok_or_else(|| null("population"))?;
        let lags = read_slice(lags, n_lags, "lags")?;
        let out = write_slice(out, n_lags, "out")?;
        let curve = exact_acf_market(&p.inner, lags)?;
        out.copy_from_slice(&curve.values);
        Ok(())
    })
}

/// Creates a simulator over a private copy of `population`.
///
/// # Safety
/// `population` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_simulator_new(
    population: *const HetlmfPopulation,
    seed: u64,
    init: HetlmfInitMode,
    out: *mut *mut HetlmfSimulator,
) -> HetlmfStatus {
    guard(|| {
        let p = population.as_ref().ok_or_else(|| null("population"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = match init {
            HetlmfInitMode::Stationary => InitMode::Stationary,
            HetlmfInitMode::FreshDraw => InitMode::FreshDraw,
        };
        // The handle owns this allocation and frees it in `Drop`, after the simulator.
        let mut handle = HetlmfSimulator {
            sim: None,
            population: Box::into_raw(Box::new(p.inner.clone())),
        };
        // SAFETY: the pointee lives until `handle` drops and is never moved or mutated.
        let population: &'static Population = &*handle.population;
        handle.sim = Some(Simulator::new(population, seed, mode)?);
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Advances `steps` market orders, writing their signs (+1/-1) to `signs` unless it is null.
///
/// # Safety
/// `simulator` must be a live handle; a non-null `signs` must have room for `steps` values.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_simulator_run(simulator: *mut HetlmfSimulator, steps: u64, signs: *mut i8) -> HetlmfStatus {
    guard(|| {
        let h = simulator.as_mut().ok_or_else(|| null("simulator"))?;
        let sim = h.sim.as_mut().expect("initialised");
        if signs.is_null() {
            for _ in 0..steps {
                sim.step();
            }
        } else {
            let n = usize::try_from(steps)
                .map_err(|_| Failure::Status(HetlmfStatus::InvalidArgument, "step count too large".into()))?;
            for s in write_slice(signs, n, "signs")? {
                *s = sim.step().0;
            }
        }
        Ok(())
    })
}

/// Steps executed so far, or 0 for a null handle.
///
/// # Safety
/// `simulator` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_simulator_steps(simulator: *const HetlmfSimulator) -> u64 {
    simulator
        .as_ref()
        .and_then(|h| h.sim.as_ref())
        .map_or(0, |s| s.steps())
}

/// # Safety
/// `simulator` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_simulator_free(simulator: *mut HetlmfSimulator) {
    if !simulator.is_null() {
        drop(Box::from_raw(simulator));
    }
}

/// Sample ACF of a sign series at lags `1..=max_lag`; `stderr` may be null.
/// Requires `len > 10 * max_lag`.
///
/// # Safety
/// `signs` must hold `len` values; `values` (and a non-null `stderr`) room for `max_lag`.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_acf_estimate(
    signs: *const i8,
    len: usize,
    max_lag: usize,
    values: *mut f64,
    stderr: *mut f64,
) -> HetlmfStatus {
    guard(|| {
        let signs = read_slice(signs, len, "signs")?;
        let out = write_slice(values, max_lag, "values")?;
        let curve = acf_estimate(signs, max_lag)?;
        out.copy_from_slice(&curve.values);
        if !stderr.is_null() {
            if let Some(se) = &curve.stderr {
                write_slice(stderr, max_lag, "stderr")?.copy_from_slice(se);
            }
        }
        Ok(())
    })
}

/// Prefactor families and their two-sided inequality for power-law splitters.
///
/// # Safety
/// `intensities` must hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_prefactor_report(
    intensities: *const f64,
    n: usize,
    alpha: f64,
    out: *mut HetlmfPrefactorReport,
) -> HetlmfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = prefactor_bounds(read_slice(intensities, n, "intensities")?, alpha)?;
        *out = HetlmfPrefactorReport {
            alpha: r.alpha,
            mu: r.mu,
            m_pt: r.m_pt,
            c0_sk: r.c0_sk,
            c0_lmf: r.c0_lmf,
            c0_upper: r.c0_upper,
            q0_sk: r.q0_sk,
            q0_bbdg: r.q0_bbdg,
            q0_upper: r.q0_upper,
            ratio: r.ratio,
            lower_slack: r.lower_slack,
            upper_slack: r.upper_slack,
        };
        Ok(())
    })
}

/// Smallest splitter count compatible with an observed ACF prefactor.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_lower_bound_pt_count(mu: f64, alpha: f64, c0: f64, out: *mut f64) -> HetlmfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lower_bound_pt_count(mu, alpha, c0)?;
        Ok(())
    })
}

/// Per-trader ACF of an exponential splitter in closed form.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hetlmf_exponential_acf(lambda: f64, decay_length: f64, tau: u64, out: *mut f64) -> HetlmfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = exponential_acf_closed_form(lambda, decay_length, tau)?;
        Ok(())
    })
}
