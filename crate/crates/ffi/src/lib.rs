//! C ABI over the `uivtsp` engine.
//!
//! Every fallible function returns a [`UivStatus`]; on failure a message is
//! available from [`uiv_last_error_message`] on the same thread. Chains and
//! scenario runs are opaque handles that the caller releases with the
//! matching `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use uivtsp::authority::Scheme;
use uivtsp::ledger::{Chain, Verification};
use uivtsp::model::{digest, Digest, DigestWidth};
use uivtsp::sim::{run_scenario, ScenarioConfig, ScenarioOutcome};
use uivtsp::token::extract_tracing_token;
use uivtsp::trust::{classify, trust_value, Classification, PenaltyMode, Thresholds};
use uivtsp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Integrity = 4,
    Io = 5,
    Parse = 6,
    NotFound = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UivPenaltyMode {
    Literal = 0,
    OnLeak = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UivScheme {
    Tsp = 0,
    Sp = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UivClassification {
    Honest = 0,
    Monitored = 1,
    SemiHonest = 2,
    Dishonest = 3,
    Removed = 4,
}

/// Scenario parameters. Fill with `uiv_scenario_config_default` first.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct UivScenarioConfig {
    pub n_workers: u32,
    pub pct_dishonest: f64,
    pub pct_semihonest: f64,
    pub delta_l: f64,
    pub delta_m: f64,
    pub delta_h: f64,
    pub cycles: u32,
    pub embed_count: u8,
    pub width_k: u32,
    pub p_leak_dishonest: f64,
    pub p_leak_semihonest: f64,
    pub trap_window_cycles: u32,
    pub penalty_mode: UivPenaltyMode,
    pub scheme: UivScheme,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct UivCycleMetrics {
    pub cycle: u32,
    pub leaks_attempted: u64,
    pub leaks_succeeded: u64,
    pub leaks_destroyed: u64,
    pub grants_real: u64,
    pub grants_false: u64,
    pub denials: u64,
    pub flagged_dishonest: u64,
    pub flagged_honest: u64,
    pub hash_invocations: u64,
}

/// Run-level rates; a `has_*` flag of 0 means the rate is undefined.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct UivRunSummary {
    pub detection_rate: f64,
    pub has_detection_rate: u8,
    pub false_alarm_rate: f64,
    pub has_false_alarm_rate: u8,
    pub leakage_probability: f64,
    pub has_leakage_probability: u8,
    pub hash_invocations: u64,
}

/// Opaque chain handle.
pub struct UivChain {
    chain: Chain,
}

/// Opaque scenario result handle.
pub struct UivRun {
    outcome: ScenarioOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> UivStatus {
    match err {
        Error::Config(_) => UivStatus::Config,
        Error::Integrity(_) => UivStatus::Integrity,
        Error::Io(_) => UivStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => UivStatus::Parse,
        _ => UivStatus::InvalidArgument,
    }
}

fn fail(status: UivStatus, msg: impl Into<String>) -> UivStatus {
    set_error(msg);
    status
}

fn guarded<F: FnOnce() -> UivStatus>(f: F) -> UivStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(UivStatus::Internal, "internal panic"),
    }
}

fn from_result<T>(r: uivtsp::Result<T>, ok: impl FnOnce(T)) -> UivStatus {
    match r {
        Ok(v) => {
            ok(v);
            UivStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Option<&'a [u8]> {
    if len == 0 {
        Some(&[])
    } else if data.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(data, len))
    }
}

/// Copies `src` into `out`, reporting the size needed through `written`.
unsafe fn copy_out(src: &[u8], out: *mut u8, out_len: usize, written: *mut usize) -> UivStatus {
    if !written.is_null() {
        *written = src.len();
    }
    if out_len < src.len() {
        return fail(
            UivStatus::BufferTooSmall,
            format!("need {} bytes", src.len()),
        );
    }
    if src.is_empty() {
        return UivStatus::Ok;
    }
    if out.is_null() {
        return fail(UivStatus::NullPointer, "output buffer is null");
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    UivStatus::Ok
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, UivStatus> {
    if path.is_null() {
        return Err(fail(UivStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(UivStatus::InvalidArgument, "path is not UTF-8")),
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn uiv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Hashes `data` at width `k` (256, 512 or 1024 bits) into `out`.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` to `out_len`
/// writable bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn uiv_digest(
    data: *const u8,
    len: usize,
    k: u32,
    out: *mut u8,
    out_len: usize,
    written: *mut usize,
) -> UivStatus {
    guarded(|| {
        let Some(data) = bytes(data, len) else {
            return fail(UivStatus::NullPointer, "data is null");
        };
        let width = match DigestWidth::from_bits(k) {
            Ok(w) => w,
            Err(e) => return fail(UivStatus::InvalidArgument, e.to_string()),
        };
        copy_out(digest(data, width).as_bytes(), out, out_len, written)
    })
}

/// Trust value for the given counts.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn uiv_trust_value(
    sec: u64,
    lek: u64,
    mode: UivPenaltyMode,
    out: *mut f64,
) -> UivStatus {
    guarded(|| {
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        *out = trust_value(sec, lek, penalty(mode));
        UivStatus::Ok
    })
}

/// Threshold classification of a trust value.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uiv_classify(
    tr: f64,
    delta_l: f64,
    delta_m: f64,
    delta_h: f64,
    out: *mut UivClassification,
) -> UivStatus {
    guarded(|| {
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        if !(0.0..=1.0).contains(&tr) {
            return fail(
                UivStatus::InvalidArgument,
                format!("trust value {tr} outside [0, 1]"),
            );
        }
        from_result(Thresholds::new(delta_l, delta_m, delta_h), |t| {
            *out = classification(classify(tr, &t));
        })
    })
}

/// Extracts the tracing token embedded in a sealed document. Returns
/// `NotFound` when the bytes carry no trailer and `Integrity` when the
/// embedded copies disagree.
///
/// # Safety
/// `sealed` must point to `len` readable bytes and `out` to `out_len`
/// writable bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn uiv_extract_tracing_token(
    sealed: *const u8,
    len: usize,
    out: *mut u8,
    out_len: usize,
    written: *mut usize,
) -> UivStatus {
    guarded(|| {
        let Some(sealed) = bytes(sealed, len) else {
            return fail(UivStatus::NullPointer, "sealed is null");
        };
        match extract_tracing_token(sealed) {
            Ok(Some(d)) => copy_out(d.as_bytes(), out, out_len, written),
            Ok(None) => fail(UivStatus::NotFound, "no tracing trailer"),
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Loads a JSON Lines chain. Integrity is not checked; call
/// `uiv_chain_verify`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uiv_chain_load(path: *const c_char, out: *mut *mut UivChain) -> UivStatus {
    guarded(|| {
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        from_result(Chain::load(&path), |chain| {
            *out = Box::into_raw(Box::new(UivChain { chain }));
        })
    })
}

/// # Safety
/// `chain` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn uiv_chain_free(chain: *mut UivChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of blocks, or 0 for a null handle.
///
/// # Safety
/// `chain` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uiv_chain_len(chain: *const UivChain) -> u64 {
    chain.as_ref().map_or(0, |c| c.chain.len() as u64)
}

/// Verifies the chain. `*valid` is 1 or 0; when invalid, `*height` holds
/// the first failing block.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn uiv_chain_verify(
    chain: *const UivChain,
    valid: *mut u8,
    height: *mut u64,
) -> UivStatus {
    guarded(|| {
        let Some(c) = chain.as_ref() else {
            return fail(UivStatus::NullPointer, "chain is null");
        };
        if valid.is_null() || height.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        match c.chain.verify() {
            Verification::Valid => {
                *valid = 1;
                *height = 0;
            }
            Verification::Invalid { height: h, .. } => {
                *valid = 0;
                *height = h;
            }
        }
        UivStatus::Ok
    })
}

/// Resolves a tracing value to the worker id it was issued to, written as
/// UTF-8 without a terminator. `NotFound` if the value is unknown.
///
/// # Safety
/// `value` must point to `value_len` bytes, `out` to `out_len` writable
/// bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn uiv_chain_lookup_tracing(
    chain: *const UivChain,
    value: *const u8,
    value_len: usize,
    out: *mut u8,
    out_len: usize,
    written: *mut usize,
) -> UivStatus {
    guarded(|| {
        let Some(c) = chain.as_ref() else {
            return fail(UivStatus::NullPointer, "chain is null");
        };
        let Some(value) = bytes(value, value_len) else {
            return fail(UivStatus::NullPointer, "value is null");
        };
        let digest = match Digest::from_bytes(value) {
            Ok(d) => d,
            Err(e) => return fail(UivStatus::InvalidArgument, e.to_string()),
        };
        match c.chain.lookup_by_tracing_token(&digest) {
            Some(rec) => copy_out(rec.sw_id.as_str().as_bytes(), out, out_len, written),
            None => fail(UivStatus::NotFound, "unknown tracing value"),
        }
    })
}

/// Writes the default scenario parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uiv_scenario_config_default(out: *mut UivScenarioConfig) -> UivStatus {
    guarded(|| {
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        let d = ScenarioConfig::default();
        *out = UivScenarioConfig {
            n_workers: d.n_workers as u32,
            pct_dishonest: d.pct_dishonest,
            pct_semihonest: d.pct_semihonest,
            delta_l: d.thresholds.delta_l,
            delta_m: d.thresholds.delta_m,
            delta_h: d.thresholds.delta_h,
            cycles: d.cycles,
            embed_count: d.embed_count,
            width_k: d.width_k.bits(),
            p_leak_dishonest: d.p_leak_dishonest,
            p_leak_semihonest: d.p_leak_semihonest,
            trap_window_cycles: d.trap_window_cycles,
            penalty_mode: UivPenaltyMode::OnLeak,
            scheme: UivScheme::Tsp,
            seed: d.seed,
        };
        UivStatus::Ok
    })
}

fn to_config(c: &UivScenarioConfig) -> uivtsp::Result<ScenarioConfig> {
    Ok(ScenarioConfig {
        n_workers: c.n_workers as usize,
        pct_dishonest: c.pct_dishonest,
        pct_semihonest: c.pct_semihonest,
        thresholds: Thresholds::new(c.delta_l, c.delta_m, c.delta_h)?,
        cycles: c.cycles,
        embed_count: c.embed_count,
        width_k: DigestWidth::from_bits(c.width_k)?,
        p_leak_dishonest: c.p_leak_dishonest,
        p_leak_semihonest: c.p_leak_semihonest,
        trap_window_cycles: c.trap_window_cycles,
        penalty_mode: penalty(c.penalty_mode),
        scheme: match c.scheme {
            UivScheme::Tsp => Scheme::UivTsp,
            UivScheme::Sp => Scheme::UivSp,
        },
        seed: c.seed,
    })
}

/// Runs one scenario to completion.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_scenario(
    cfg: *const UivScenarioConfig,
    out: *mut *mut UivRun,
) -> UivStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(UivStatus::NullPointer, "cfg is null");
        };
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        from_result(to_config(cfg).and_then(|c| run_scenario(&c)), |outcome| {
            *out = Box::into_raw(Box::new(UivRun { outcome }));
        })
    })
}

/// # Safety
/// `run` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_free(run: *mut UivRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of recorded cycles, or 0 for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_cycle_count(run: *const UivRun) -> u32 {
    run.as_ref()
        .map_or(0, |r| r.outcome.metrics.cycles.len() as u32)
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_cycle(
    run: *const UivRun,
    index: u32,
    out: *mut UivCycleMetrics,
) -> UivStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            return fail(UivStatus::NullPointer, "run is null");
        };
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        let Some(c) = r.outcome.metrics.cycles.get(index as usize) else {
            return fail(
                UivStatus::InvalidArgument,
                format!("cycle {index} out of range"),
            );
        };
        *out = UivCycleMetrics {
            cycle: c.cycle,
            leaks_attempted: c.leaks_attempted,
            leaks_succeeded: c.leaks_succeeded,
            leaks_destroyed: c.leaks_destroyed,
            grants_real: c.grants_real,
            grants_false: c.grants_false,
            denials: c.denials,
            flagged_dishonest: c.flagged_dishonest,
            flagged_honest: c.flagged_honest,
            hash_invocations: c.hash_invocations,
        };
        UivStatus::Ok
    })
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_summary(run: *const UivRun, out: *mut UivRunSummary) -> UivStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            return fail(UivStatus::NullPointer, "run is null");
        };
        if out.is_null() {
            return fail(UivStatus::NullPointer, "out is null");
        }
        let m = &r.outcome.metrics;
        let split = |v: Option<f64>| (v.unwrap_or(0.0), u8::from(v.is_some()));
        let (detection_rate, has_detection_rate) = split(m.detection_rate);
        let (false_alarm_rate, has_false_alarm_rate) = split(m.false_alarm_rate);
        let (leakage_probability, has_leakage_probability) = split(m.leakage_probability);
        *out = UivRunSummary {
            detection_rate,
            has_detection_rate,
            false_alarm_rate,
            has_false_alarm_rate,
            leakage_probability,
            has_leakage_probability,
            hash_invocations: r.outcome.hash_invocations,
        };
        UivStatus::Ok
    })
}

/// Writes the run's ledger as JSON Lines.
///
/// # Safety
/// `run` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uiv_run_save_ledger(run: *const UivRun, path: *const c_char) -> UivStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            return fail(UivStatus::NullPointer, "run is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        from_result(r.outcome.chain.save(&path), |_| {})
    })
}

fn penalty(mode: UivPenaltyMode) -> PenaltyMode {
    match mode {
        UivPenaltyMode::Literal => PenaltyMode::Literal,
        UivPenaltyMode::OnLeak => PenaltyMode::OnLeak,
    }
}

fn classification(c: Classification) -> UivClassification {
    match c {
        Classification::Honest => UivClassification::Honest,
        Classification::Monitored => UivClassification::Monitored,
        Classification::SemiHonest => UivClassification::SemiHonest,
        Classification::Dishonest => UivClassification::Dishonest,
        Classification::Removed => UivClassification::Removed,
    }
}
