use georoute_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = gr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn prefix_index_round_trip() {
    unsafe {
        let mut idx = ptr::null_mut();
        assert_eq!(gr_prefix_index_new(1, 1024, &mut idx), GrStatus::Ok);
        let a = CString::new("germany").unwrap();
        let b = CString::new("israel").unwrap();
        let toks: Vec<u32> = (0..10).collect();
        assert_eq!(gr_prefix_index_insert(idx, toks.as_ptr(), toks.len(), a.as_ptr(), 1), GrStatus::Ok);
        assert_eq!(gr_prefix_index_insert(idx, toks.as_ptr(), 6, b.as_ptr(), 2), GrStatus::Ok);

        let mut q: Vec<u32> = (0..8).collect();
        q.push(99);
        let mut n = 0usize;
        assert_eq!(gr_prefix_index_longest_match(idx, q.as_ptr(), q.len(), &mut n), GrStatus::Ok);
        assert_eq!(n, 8);
        assert_eq!(gr_prefix_index_overlap(idx, q.as_ptr(), q.len(), b.as_ptr(), &mut n), GrStatus::Ok);
        assert_eq!(n, 6);

        let mut removed = false;
        assert_eq!(gr_prefix_index_remove_holder(idx, toks.as_ptr(), 3, a.as_ptr(), &mut removed), GrStatus::Ok);
        assert!(removed);
        assert_eq!(gr_prefix_index_overlap(idx, q.as_ptr(), q.len(), a.as_ptr(), &mut n), GrStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(gr_prefix_index_total_blocks(idx, &mut n), GrStatus::Ok);
        assert!(n > 0);
        gr_prefix_index_free(idx);
    }
}

#[test]
fn bad_arguments_report_errors() {
    unsafe {
        let mut idx = ptr::null_mut();
        assert_eq!(gr_prefix_index_new(0, 10, &mut idx), GrStatus::InvalidArgument);
        assert!(last_error().contains("block_size"));
        assert_eq!(gr_prefix_index_new(4, 10, ptr::null_mut()), GrStatus::NullArgument);

        let mut n = 0usize;
        assert_eq!(gr_prefix_index_longest_match(ptr::null(), ptr::null(), 0, &mut n), GrStatus::NullArgument);
        assert!(last_error().contains("index"));

        let bad = [0xffu8, 0xfe, 0];
        let mut h = 0u64;
        assert_eq!(gr_prompt_hash(bad.as_ptr().cast(), &mut h), GrStatus::InvalidUtf8);

        let mut km = 0.0;
        assert_eq!(gr_haversine_km(91.0, 0.0, 0.0, 0.0, &mut km), GrStatus::InvalidArgument);
        // a success clears the message
        assert_eq!(gr_haversine_km(0.0, 0.0, 0.0, 0.0, &mut km), GrStatus::Ok);
        assert!(gr_last_error_message().is_null());
        gr_string_free(ptr::null_mut());
        gr_prefix_index_free(ptr::null_mut());
    }
}

#[test]
fn cost_matches_reference_scenario() {
    let mut out = GrCostBreakdown::default();
    unsafe {
        assert_eq!(gr_estimate_cost(281.0, 200, 0, 0, 0.0466, 1.0, &mut out), GrStatus::Ok);
    }
    assert!((out.network_ms - 281.0).abs() < 1e-12);
    assert!((out.prefill_ms - 9.32).abs() < 1e-9);
    assert_eq!(out.queue_ms, 0.0);
    assert!((out.total_ms - 290.32).abs() < 1e-9);
    unsafe {
        assert_eq!(gr_estimate_cost(3.0, 200, 0, 6500, 0.0466, 1.0, &mut out), GrStatus::Ok);
    }
    assert!((out.queue_ms - 302.9).abs() < 1e-9);
    unsafe {
        assert_eq!(gr_estimate_cost(0.0, 10, 20, 0, 0.0466, 1.0, &mut out), GrStatus::InvalidArgument);
        assert_eq!(gr_estimate_cost(0.0, 10, 0, 0, 0.0, 1.0, &mut out), GrStatus::InvalidArgument);
    }
}

#[test]
fn haversine_and_hash() {
    let mut km = 0.0;
    unsafe {
        assert_eq!(gr_haversine_km(37.77, -122.42, 50.11, 8.68, &mut km), GrStatus::Ok);
    }
    assert!((km - 9150.0).abs() < 50.0, "{km}");
    let p = CString::new("hello").unwrap();
    let mut h = 0u64;
    unsafe {
        assert_eq!(gr_prompt_hash(p.as_ptr(), &mut h), GrStatus::Ok);
    }
    assert_eq!(h, georoute_core::geo::prompt_hash("hello"));
}

#[test]
fn calibration_fit() {
    let x: Vec<u64> = (1..=87).map(|i| i * 50).collect();
    let y: Vec<f64> = x.iter().map(|&v| 150.72 + 0.0938 * v as f64).collect();
    let mut cal = GrCalibration::default();
    unsafe {
        assert_eq!(gr_fit_calibration(x.as_ptr(), y.as_ptr(), x.len(), &mut cal), GrStatus::Ok);
    }
    assert!((cal.intercept - 150.72).abs() / 150.72 < 1e-9);
    assert!((cal.slope - 0.0938).abs() / 0.0938 < 1e-9);
    assert_eq!(cal.n, 87);
    unsafe {
        assert_eq!(gr_fit_calibration(x.as_ptr(), y.as_ptr(), 1, &mut cal), GrStatus::InvalidArgument);
    }
    assert!(last_error().contains("at least 2"));
}

const SOLO: &str = r#"
schema_version = 1
duration_s = 1.0
[[regions]]
id = "solo"
lat = 0.0
lon = 0.0
[regions.backend]
max_running = 4
itl_ms = 12.5
kv_capacity_tokens = 100000
prefill = { intercept = 150.72, slope = 0.0938 }
[workload]
arrival = { kind = "throughput", ceiling = 1.0 }
[workload.source]
kind = "synthetic"
origins = [{ lat = 0.0, lon = 0.0, weight = 1.0 }]
prefixes = { num_prefixes = 1, prefix_len = { kind = "constant", tokens = 500 }, suffix_len = { kind = "constant", tokens = 0 } }
"#;

#[test]
fn simulate_returns_report_json() {
    let cfg = CString::new(SOLO).unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(gr_simulate_toml(cfg.as_ptr(), &mut json), GrStatus::Ok);
        let s = CStr::from_ptr(json).to_str().unwrap().to_owned();
        gr_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["metrics"]["ttft_ms"]["median"].as_f64(), Some(197.62));
    }
    let bad = CString::new(SOLO.replace("max_running = 4", "max_running = 0")).unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(gr_simulate_toml(bad.as_ptr(), &mut json), GrStatus::Config);
    }
    assert!(json.is_null());
    assert!(last_error().contains("max_running"));
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(gr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
