//! C ABI over `dwols_privacy`.
//!
//! Every fallible function returns a [`DwolsStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and
//! read with [`dwols_last_error_message`]. Objects are opaque handles owned
//! by the caller and released with the matching `_free` function; strings
//! returned by the library are released with [`dwols_string_free`].

#![allow(clippy::missing_safety_doc)]

use dwols_privacy::config::AnalysisConfig;
use dwols_privacy::data::Dataset;
use dwols_privacy::distributed::{
    aggregate_summaries, compute_site_summary, deserialize_summary, serialize_summary,
    solve_distributed, SiteSummary,
};
use dwols_privacy::gdwols::{
    optimal_dose, BlipEstimate, BlipOrder, DesignSpec, DoseKind, DoseRange,
};
use dwols_privacy::weights::estimate_weights;
use dwols_privacy::{Error, ErrorClass};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result codes. Mirrors the CLI exit-code classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwolsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, input data or I/O.
    Config = 3,
    /// Singular design, non-convergence, separation.
    Numerical = 4,
    /// Fingerprint mismatch, duplicate site, malformed summary.
    Protocol = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwolsDoseKind {
    Interior = 0,
    Boundary = 1,
    FlatBlip = 2,
    /// Linear blip: the "dose" is the 0/1 treatment decision.
    Binary = 3,
}

/// Individual-level rows of one or more sites.
pub struct DwolsDataset(Dataset);
/// Design and treatment-model choices shared by all sites.
pub struct DwolsConfig(AnalysisConfig);
/// One site's XᵀWX / XᵀWy summary.
pub struct DwolsSiteSummary(SiteSummary);
/// Coordinator collecting site summaries.
pub struct DwolsAggregator(Vec<SiteSummary>);
/// Fitted blip parameters.
pub struct DwolsEstimate(BlipEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DwolsStatus {
    match e.class() {
        ErrorClass::Config => DwolsStatus::Config,
        ErrorClass::Numerical => DwolsStatus::Numerical,
        ErrorClass::Protocol => DwolsStatus::Protocol,
    }
}

struct Failure(DwolsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DwolsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DwolsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DwolsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(DwolsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(DwolsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(DwolsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DwolsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = borrow_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let slot = borrow_mut(out, "out")?;
    let c =
        CString::new(s).map_err(|_| Failure(DwolsStatus::Panic, "string contains nul".into()))?;
    *slot = c.into_raw();
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dwols_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn dwols_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a CSV file with columns `site`, covariates..., `a`, `y`.
#[no_mangle]
pub unsafe extern "C" fn dwols_dataset_from_csv_path(
    path: *const c_char,
    out: *mut *mut DwolsDataset,
) -> DwolsStatus {
    guard(|| {
        let path = string_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(Error::from)?;
        put(out, DwolsDataset(Dataset::read_csv(file)?))
    })
}

/// Same as [`dwols_dataset_from_csv_path`] with the CSV text in memory.
#[no_mangle]
pub unsafe extern "C" fn dwols_dataset_from_csv_str(
    text: *const c_char,
    out: *mut *mut DwolsDataset,
) -> DwolsStatus {
    guard(|| {
        let text = string_arg(text, "text")?;
        put(out, DwolsDataset(Dataset::read_csv(text.as_bytes())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_dataset_len(
    dataset: *const DwolsDataset,
    out_len: *mut usize,
) -> DwolsStatus {
    guard(|| {
        let d = borrow(dataset, "dataset")?;
        *borrow_mut(out_len, "out_len")? = d.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_dataset_free(dataset: *mut DwolsDataset) {
    free(dataset)
}

/// Analysis config from TOML text (`[design]`, `[treatment]`, `ipw_cap`).
#[no_mangle]
pub unsafe extern "C" fn dwols_config_from_toml(
    text: *const c_char,
    out: *mut *mut DwolsConfig,
) -> DwolsStatus {
    guard(|| {
        let text = string_arg(text, "text")?;
        put(out, DwolsConfig(AnalysisConfig::from_toml(text)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_config_from_json(
    text: *const c_char,
    out: *mut *mut DwolsConfig,
) -> DwolsStatus {
    guard(|| {
        let text = string_arg(text, "text")?;
        put(out, DwolsConfig(AnalysisConfig::from_json(text)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_config_free(config: *mut DwolsConfig) {
    free(config)
}

/// Site-local step: fits the treatment model on this site's rows and
/// forms XᵀWX / XᵀWy. `dataset` must hold a single site.
#[no_mangle]
pub unsafe extern "C" fn dwols_site_summary_compute(
    dataset: *const DwolsDataset,
    config: *const DwolsConfig,
    out: *mut *mut DwolsSiteSummary,
) -> DwolsStatus {
    guard(|| {
        let d = borrow(dataset, "dataset")?;
        let c = &borrow(config, "config")?.0;
        let s = compute_site_summary(&d.0, &c.design, &c.treatment, c.ipw_cap)?;
        put(out, DwolsSiteSummary(s))
    })
}

/// JSON wire form of a summary; release with [`dwols_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dwols_site_summary_to_json(
    summary: *const DwolsSiteSummary,
    out: *mut *mut c_char,
) -> DwolsStatus {
    guard(|| {
        let s = borrow(summary, "summary")?;
        let bytes = serialize_summary(&s.0)?;
        put_string(
            out,
            String::from_utf8(bytes).expect("serde_json emits UTF-8"),
        )
    })
}

/// Parses and fingerprint-checks a summary received from a site.
#[no_mangle]
pub unsafe extern "C" fn dwols_site_summary_from_json(
    text: *const c_char,
    out: *mut *mut DwolsSiteSummary,
) -> DwolsStatus {
    guard(|| {
        let text = string_arg(text, "text")?;
        put(out, DwolsSiteSummary(deserialize_summary(text.as_bytes())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_site_summary_free(summary: *mut DwolsSiteSummary) {
    free(summary)
}

#[no_mangle]
pub extern "C" fn dwols_aggregator_new() -> *mut DwolsAggregator {
    Box::into_raw(Box::new(DwolsAggregator(Vec::new())))
}

/// Copies `summary` into the aggregator; the caller keeps ownership.
#[no_mangle]
pub unsafe extern "C" fn dwols_aggregator_add(
    aggregator: *mut DwolsAggregator,
    summary: *const DwolsSiteSummary,
) -> DwolsStatus {
    guard(|| {
        let agg = borrow_mut(aggregator, "aggregator")?;
        let s = borrow(summary, "summary")?;
        agg.0.push(s.0.clone());
        Ok(())
    })
}

/// Sums the collected summaries and solves for θ. `config` may be null,
/// in which case the design is read back from the summaries' columns.
#[no_mangle]
pub unsafe extern "C" fn dwols_aggregator_solve(
    aggregator: *const DwolsAggregator,
    config: *const DwolsConfig,
    out: *mut *mut DwolsEstimate,
) -> DwolsStatus {
    guard(|| {
        let agg = borrow(aggregator, "aggregator")?;
        let state = aggregate_summaries(&agg.0)?;
        let spec = match config.as_ref() {
            Some(c) => c.0.design.clone(),
            None => {
                let mut spec = DesignSpec::from_column_names(&state.columns)?;
                spec.blip_order = state.blip_order;
                spec
            }
        };
        put(out, DwolsEstimate(solve_distributed(&state, &spec)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_aggregator_free(aggregator: *mut DwolsAggregator) {
    free(aggregator)
}

/// Centralized fit on individual-level data.
#[no_mangle]
pub unsafe extern "C" fn dwols_estimate_gold(
    dataset: *const DwolsDataset,
    config: *const DwolsConfig,
    out: *mut *mut DwolsEstimate,
) -> DwolsStatus {
    guard(|| {
        let d = borrow(dataset, "dataset")?;
        let c = &borrow(config, "config")?.0;
        let w = estimate_weights(&d.0, &c.treatment, c.ipw_cap)?;
        put(
            out,
            DwolsEstimate(dwols_privacy::gdwols::fit_gdwols(&d.0, &c.design, &w)?),
        )
    })
}

/// Copies ψ into `buf`. With `buf` null or too short, only `out_len` is
/// written (and `BUFFER_TOO_SMALL` returned when `buf` is non-null).
#[no_mangle]
pub unsafe extern "C" fn dwols_estimate_psi(
    estimate: *const DwolsEstimate,
    buf: *mut f64,
    buf_len: usize,
    out_len: *mut usize,
) -> DwolsStatus {
    guard(|| {
        let psi = &borrow(estimate, "estimate")?.0.psi;
        *borrow_mut(out_len, "out_len")? = psi.len();
        if buf.is_null() {
            return Ok(());
        }
        if buf_len < psi.len() {
            return Err(Failure(
                DwolsStatus::BufferTooSmall,
                format!("need {} doubles, got {buf_len}", psi.len()),
            ));
        }
        ptr::copy_nonoverlapping(psi.as_ptr(), buf, psi.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_estimate_to_json(
    estimate: *const DwolsEstimate,
    out: *mut *mut c_char,
) -> DwolsStatus {
    guard(|| {
        let e = borrow(estimate, "estimate")?;
        put_string(out, serde_json::to_string(&e.0).map_err(Error::from)?)
    })
}

/// Recommendation for one subject given by `n` named covariates.
///
/// Quadratic blips return the dose maximizing the blip on `[a_min, a_max]`.
/// Linear blips ignore the range and return 1.0 (treat) or 0.0 with kind
/// `BINARY`.
#[no_mangle]
pub unsafe extern "C" fn dwols_optimal_dose(
    estimate: *const DwolsEstimate,
    names: *const *const c_char,
    values: *const f64,
    n: usize,
    a_min: f64,
    a_max: f64,
    out_dose: *mut f64,
    out_kind: *mut DwolsDoseKind,
) -> DwolsStatus {
    guard(|| {
        let est = &borrow(estimate, "estimate")?.0;
        if n > 0 && (names.is_null() || values.is_null()) {
            return Err(Failure(
                DwolsStatus::NullPointer,
                "names/values is null".into(),
            ));
        }
        let mut owned = Vec::with_capacity(n);
        for i in 0..n {
            owned.push(string_arg(*names.add(i), "covariate name")?.to_string());
        }
        let vals = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(values, n)
        };
        let x_psi = est.blip_covariates(&owned, vals)?;
        let (dose, kind) = match est.blip_order {
            BlipOrder::QuadraticInA => {
                let d = optimal_dose(&est.quadratic()?, &x_psi, DoseRange::new(a_min, a_max)?);
                let kind = match d.kind {
                    DoseKind::Interior => DwolsDoseKind::Interior,
                    DoseKind::Boundary => DwolsDoseKind::Boundary,
                    DoseKind::FlatBlip => DwolsDoseKind::FlatBlip,
                };
                (d.dose, kind)
            }
            BlipOrder::LinearInA => (
                f64::from(est.optimal_binary_rule(&x_psi)),
                DwolsDoseKind::Binary,
            ),
        };
        *borrow_mut(out_dose, "out_dose")? = dose;
        *borrow_mut(out_kind, "out_kind")? = kind;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dwols_estimate_free(estimate: *mut DwolsEstimate) {
    free(estimate)
}
