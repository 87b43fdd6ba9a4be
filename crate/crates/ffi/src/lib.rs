//! C ABI over the `sedml` aggregation simulator.
//!
//! Every function returns a [`SedmlStatus`]; on failure the message is
//! available from [`sedml_last_error`] on the same thread. Aggregators are
//! opaque handles created by [`sedml_aggregator_new`] and released with
//! [`sedml_aggregator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sedml::privacy::{solve_noise_for_epsilon, DpParams, DEFAULT_SCALE};
use sedml::protocol::{encoded_noise, plaintext_oracle, run_sample, PredictionVector};
use sedml::simnet::{Fabric, SessionConfig};
use sedml::{AggregationOutcome, Error, MaxStrategy, ProtocolConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SedmlStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Protocol = 3,
    Infeasible = 4,
    Range = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SedmlStrategy {
    Sequential = 0,
    Tournament = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SedmlConfig {
    pub teachers: u32,
    pub classes: u32,
    /// Fraction of teachers that must agree, in (0, 1].
    pub threshold: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub ring_bits: u32,
    pub scale: u64,
    pub seed: u64,
    /// A `SedmlStrategy` value.
    pub strategy: u32,
}

/// Outcome of one sample. `label` is meaningful only when `consensus` is set.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SedmlSampleResult {
    pub consensus: bool,
    pub label: u32,
    pub phase_rounds: [u64; 3],
    pub phase_bytes: [u64; 3],
    pub server_reveals: u32,
}

/// Opaque aggregator handle.
pub struct SedmlAggregator {
    config: ProtocolConfig,
    fabric: Fabric,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SedmlStatus {
    match e {
        Error::Usage(_) => SedmlStatus::Usage,
        Error::Protocol(_) => SedmlStatus::Protocol,
        Error::Range(_) => SedmlStatus::Range,
        Error::Infeasible(_) => SedmlStatus::Infeasible,
        Error::Io(_) => SedmlStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SedmlStatus>) -> SedmlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SedmlStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_last_error("panic inside sedml");
            SedmlStatus::Panic
        }
    }
}

fn fail(e: Error) -> SedmlStatus {
    set_last_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> SedmlStatus {
    set_last_error(&format!("{what} is NULL"));
    SedmlStatus::NullPointer
}

fn to_config(c: &SedmlConfig) -> Result<ProtocolConfig, SedmlStatus> {
    let strategy = match c.strategy {
        s if s == SedmlStrategy::Sequential as u32 => MaxStrategy::Sequential,
        s if s == SedmlStrategy::Tournament as u32 => MaxStrategy::Tournament,
        s => return Err(fail(Error::Usage(format!("unknown strategy {s}")))),
    };
    Ok(ProtocolConfig {
        teachers: c.teachers as usize,
        classes: c.classes as usize,
        threshold: c.threshold,
        sigma1: c.sigma1,
        sigma2: c.sigma2,
        ring_bits: c.ring_bits,
        scale: c.scale,
        seed: c.seed,
        strategy,
    })
}

/// 250 teachers, 10 classes, 60% threshold, no noise, 64-bit ring.
#[no_mangle]
pub extern "C" fn sedml_default_config() -> SedmlConfig {
    let d = ProtocolConfig::default();
    SedmlConfig {
        teachers: d.teachers as u32,
        classes: d.classes as u32,
        threshold: d.threshold,
        sigma1: d.sigma1,
        sigma2: d.sigma2,
        ring_bits: d.ring_bits,
        scale: DEFAULT_SCALE,
        seed: d.seed,
        strategy: SedmlStrategy::Sequential as u32,
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `sedml_*` call on this thread.
#[no_mangle]
pub extern "C" fn sedml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn sedml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `config` must point to a valid `SedmlConfig`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedml_aggregator_new(
    config: *const SedmlConfig,
    out: *mut *mut SedmlAggregator,
) -> SedmlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let Some(config) = config.as_ref() else {
            return Err(null("config"));
        };
        let config = to_config(config)?;
        config.validate().map_err(fail)?;
        let agg = Box::new(SedmlAggregator {
            config,
            fabric: Fabric::new(SessionConfig::default()),
        });
        *out = Box::into_raw(agg);
        Ok(())
    })
}

/// # Safety
/// `agg` must be NULL or a handle from `sedml_aggregator_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sedml_aggregator_free(agg: *mut SedmlAggregator) {
    if !agg.is_null() {
        drop(Box::from_raw(agg));
    }
}

unsafe fn predictions(
    config: &ProtocolConfig,
    votes: *const u32,
    len: usize,
) -> Result<Vec<PredictionVector>, SedmlStatus> {
    if votes.is_null() {
        return Err(null("votes"));
    }
    std::slice::from_raw_parts(votes, len)
        .iter()
        .map(|&c| PredictionVector::one_hot(c as usize, config.classes))
        .collect::<Result<_, _>>()
        .map_err(fail)
}

/// Run one sample. `votes[j]` is teacher `j`'s predicted class; `len` must
/// equal the configured teacher count.
///
/// # Safety
/// `agg` must be a live handle, `votes` must point to `len` readable
/// `uint32_t`s and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedml_aggregator_run_sample(
    agg: *mut SedmlAggregator,
    sample: u64,
    votes: *const u32,
    len: usize,
    out: *mut SedmlSampleResult,
) -> SedmlStatus {
    guard(|| {
        let Some(agg) = agg.as_mut() else {
            return Err(null("aggregator"));
        };
        let Some(out) = out.as_mut() else {
            return Err(null("out"));
        };
        let preds = predictions(&agg.config, votes, len)?;
        let run = run_sample(&agg.config, sample, &preds, &mut agg.fabric).map_err(fail)?;
        *out = SedmlSampleResult {
            consensus: run.outcome != AggregationOutcome::NoConsensus,
            label: run.outcome.label().unwrap_or(0) as u32,
            phase_rounds: run.stats.protocol_rounds(),
            phase_bytes: run.stats.protocol_bytes(),
            server_reveals: run.server_reveals() as u32,
        };
        Ok(())
    })
}

/// Plaintext reference for the same sample and noise. Only `consensus` and
/// `label` are filled in.
///
/// # Safety
/// Same as [`sedml_aggregator_run_sample`].
#[no_mangle]
pub unsafe extern "C" fn sedml_aggregator_oracle(
    agg: *const SedmlAggregator,
    sample: u64,
    votes: *const u32,
    len: usize,
    out: *mut SedmlSampleResult,
) -> SedmlStatus {
    guard(|| {
        let Some(agg) = agg.as_ref() else {
            return Err(null("aggregator"));
        };
        let Some(out) = out.as_mut() else {
            return Err(null("out"));
        };
        let preds = predictions(&agg.config, votes, len)?;
        let noise = encoded_noise(&agg.config, sample).map_err(fail)?;
        let outcome = plaintext_oracle(&agg.config, &preds, &noise).map_err(fail)?;
        *out = SedmlSampleResult {
            consensus: outcome != AggregationOutcome::NoConsensus,
            label: outcome.label().unwrap_or(0) as u32,
            ..SedmlSampleResult::default()
        };
        Ok(())
    })
}

/// `(ε, δ)` after `queries` answered samples. Writes `INFINITY` when a sigma
/// is zero.
///
/// # Safety
/// `epsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedml_accountant_epsilon(
    sigma1: f64,
    sigma2: f64,
    delta: f64,
    queries: u64,
    epsilon: *mut f64,
) -> SedmlStatus {
    guard(|| {
        let Some(epsilon) = epsilon.as_mut() else {
            return Err(null("epsilon"));
        };
        let report = DpParams { sigma1, sigma2, delta, queries }.account().map_err(fail)?;
        *epsilon = report.epsilon.unwrap_or(f64::INFINITY);
        Ok(())
    })
}

/// Noise levels with `sigma1 = ratio * sigma2` meeting `epsilon` after
/// `queries` answers. `SEDML_STATUS_INFEASIBLE` if no noise level can.
///
/// # Safety
/// `sigma1` and `sigma2` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedml_solve_noise(
    epsilon: f64,
    delta: f64,
    ratio: f64,
    queries: u64,
    sigma1: *mut f64,
    sigma2: *mut f64,
) -> SedmlStatus {
    guard(|| {
        if sigma1.is_null() || sigma2.is_null() {
            return Err(null("sigma output"));
        }
        let (s1, s2) = solve_noise_for_epsilon(epsilon, delta, ratio, queries).map_err(fail)?;
        *sigma1 = s1;
        *sigma2 = s2;
        Ok(())
    })
}
