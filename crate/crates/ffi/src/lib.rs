//! C ABI over `georoute-core`.
//!
//! Every fallible function returns a [`GrStatus`]; on failure the message is
//! available from [`gr_last_error_message`] on the same thread. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`gr_string_free`]. Handles are released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use georoute_core::cost::{
    fit_prefill_calibration, queue_wait_time, residual_prefill_time, CostBreakdown, PrefillObservation,
};
use georoute_core::geo::{haversine_km, prompt_hash, GeoPoint};
use georoute_core::prefix_index::{IndexConfig, PrefixIndex};
use georoute_core::sim::config::SimConfig;
use georoute_core::sim::run;
use georoute_core::state::{RegionId, Token};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Config = 4,
    Runtime = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GrCostBreakdown {
    pub network_ms: f64,
    pub prefill_ms: f64,
    pub queue_ms: f64,
    pub total_ms: f64,
}

impl From<CostBreakdown> for GrCostBreakdown {
    fn from(b: CostBreakdown) -> Self {
        GrCostBreakdown { network_ms: b.network_ms, prefill_ms: b.prefill_ms, queue_ms: b.queue_ms, total_ms: b.total_ms }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GrCalibration {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Opaque prefix index handle.
pub struct GrPrefixIndex {
    inner: PrefixIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(GrStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GrStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            GrStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(GrStatus::NullArgument, format!("{name} is null"))
}

fn invalid(msg: impl ToString) -> Fail {
    Fail(GrStatus::InvalidArgument, msg.to_string())
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(GrStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn tokens_arg<'a>(p: *const Token, len: usize) -> Result<&'a [Token], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null("tokens"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn index_ref<'a>(p: *const GrPrefixIndex) -> Result<&'a GrPrefixIndex, Fail> {
    p.as_ref().ok_or_else(|| null("index"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn gr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_new(
    block_size: usize,
    capacity_blocks: usize,
    out: *mut *mut GrPrefixIndex,
) -> GrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if block_size == 0 {
            return Err(invalid("block_size must be positive"));
        }
        let idx = PrefixIndex::new(IndexConfig { block_size, capacity_blocks });
        *out = Box::into_raw(Box::new(GrPrefixIndex { inner: idx }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_free(index: *mut GrPrefixIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Records that `node` holds the KV blocks of `tokens`.
#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_insert(
    index: *mut GrPrefixIndex,
    tokens: *const Token,
    len: usize,
    node: *const c_char,
    now: u64,
) -> GrStatus {
    guard(|| {
        let idx = index.as_mut().ok_or_else(|| null("index"))?;
        let toks = tokens_arg(tokens, len)?;
        let node = RegionId::new(str_arg(node, "node")?);
        idx.inner.insert(toks, &node, now);
        Ok(())
    })
}

/// Longest indexed prefix of `tokens` held by any node, in tokens.
#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_longest_match(
    index: *const GrPrefixIndex,
    tokens: *const Token,
    len: usize,
    out_len: *mut usize,
) -> GrStatus {
    guard(|| {
        let idx = index_ref(index)?;
        let out = out_ref(out_len, "out_len")?;
        *out = idx.inner.longest_prefix_match(tokens_arg(tokens, len)?).match_len;
        Ok(())
    })
}

/// Longest prefix of `tokens` that `node` holds, in tokens.
#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_overlap(
    index: *const GrPrefixIndex,
    tokens: *const Token,
    len: usize,
    node: *const c_char,
    out_len: *mut usize,
) -> GrStatus {
    guard(|| {
        let idx = index_ref(index)?;
        let out = out_ref(out_len, "out_len")?;
        let node = RegionId::new(str_arg(node, "node")?);
        *out = idx.inner.overlap_for_node(tokens_arg(tokens, len)?, &node);
        Ok(())
    })
}

/// Drops `node` from the path of `tokens` and everything below it.
/// `out_removed` is set to whether anything changed.
#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_remove_holder(
    index: *mut GrPrefixIndex,
    tokens: *const Token,
    len: usize,
    node: *const c_char,
    out_removed: *mut bool,
) -> GrStatus {
    guard(|| {
        let idx = index.as_mut().ok_or_else(|| null("index"))?;
        let out = out_ref(out_removed, "out_removed")?;
        let node = RegionId::new(str_arg(node, "node")?);
        *out = idx.inner.remove_holder(tokens_arg(tokens, len)?, &node);
        Ok(())
    })
}

/// Number of blocks currently stored.
#[no_mangle]
pub unsafe extern "C" fn gr_prefix_index_total_blocks(index: *const GrPrefixIndex, out: *mut usize) -> GrStatus {
    guard(|| {
        let idx = index_ref(index)?;
        *out_ref(out, "out")? = idx.inner.total_blocks();
        Ok(())
    })
}

/// Cost of serving a prompt of `l_p` tokens, `l_hit` of them cached, behind
/// `pending_tokens` of queued work, `network_ms` away.
#[no_mangle]
pub unsafe extern "C" fn gr_estimate_cost(
    network_ms: f64,
    l_p: u64,
    l_hit: u64,
    pending_tokens: u64,
    t_p: f64,
    q_s: f64,
    out: *mut GrCostBreakdown,
) -> GrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let valid = t_p.is_finite() && t_p > 0.0 && q_s.is_finite() && q_s >= 0.0 && network_ms >= 0.0;
        if !valid {
            return Err(invalid("t_p must be > 0, q_s >= 0, network_ms >= 0"));
        }
        let prefill = residual_prefill_time(l_p, l_hit, t_p).map_err(invalid)?;
        let queue = queue_wait_time(pending_tokens, t_p, q_s);
        *out = CostBreakdown::new(network_ms, prefill, queue).into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gr_haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_km: *mut f64) -> GrStatus {
    guard(|| {
        let out = out_ref(out_km, "out_km")?;
        let a = GeoPoint::new(lat1, lon1).map_err(invalid)?;
        let b = GeoPoint::new(lat2, lon2).map_err(invalid)?;
        *out = haversine_km(a, b);
        Ok(())
    })
}

/// 64-bit FNV-1a of a NUL-terminated UTF-8 prompt.
#[no_mangle]
pub unsafe extern "C" fn gr_prompt_hash(prompt: *const c_char, out: *mut u64) -> GrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = prompt_hash(str_arg(prompt, "prompt")?);
        Ok(())
    })
}

/// Least-squares prefill fit over `n` `(input_tokens[i], ttft_ms[i])` pairs.
#[no_mangle]
pub unsafe extern "C" fn gr_fit_calibration(
    input_tokens: *const u64,
    ttft_ms: *const f64,
    n: usize,
    out: *mut GrCalibration,
) -> GrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if n > 0 && (input_tokens.is_null() || ttft_ms.is_null()) {
            return Err(null("samples"));
        }
        let obs: Vec<PrefillObservation> = (0..n)
            .map(|i| PrefillObservation { input_tokens: *input_tokens.add(i), ttft_ms: *ttft_ms.add(i) })
            .collect();
        let cal = fit_prefill_calibration(&obs).map_err(invalid)?;
        *out = GrCalibration { intercept: cal.intercept, slope: cal.slope, r_squared: cal.r_squared, n: cal.n };
        Ok(())
    })
}

/// Runs a simulation from a TOML config document and returns the run report
/// as JSON. Relative file paths in the config resolve against the working
/// directory.
#[no_mangle]
pub unsafe extern "C" fn gr_simulate_toml(config_toml: *const c_char, out_report_json: *mut *mut c_char) -> GrStatus {
    guard(|| {
        let out = out_ref(out_report_json, "out_report_json")?;
        let text = str_arg(config_toml, "config_toml")?;
        let cfg = SimConfig::from_toml_str(text).map_err(|e| Fail(GrStatus::Config, e.to_string()))?;
        let report = run(&cfg).map_err(|e| match e {
            georoute_core::sim::SimError::Config(c) => Fail(GrStatus::Config, c.to_string()),
            other => Fail(GrStatus::Runtime, other.to_string()),
        })?;
        let json = CString::new(report.report.to_json()).expect("json has no NUL");
        *out = json.into_raw();
        Ok(())
    })
}
