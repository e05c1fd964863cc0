use super::config::SimConfig;
use super::*;
use crate::policy::Strategy;
use crate::telemetry::Outcome;
use crate::workload::{LengthDist, PromptSourceSpec, SharedPrefixSpec};

const BURST: &str = include_str!("../../../../configs/three_region_burst.toml");
const GERMANY: &str = include_str!("../../../../configs/germany_forward.toml");

fn single_region(prompt_tokens: usize, requests: f64, caching: bool) -> SimConfig {
    let mut cfg = SimConfig::from_toml_str(super::config::tests::MINIMAL).unwrap();
    cfg.duration_s = requests;
    cfg.regions[0].backend.prefix_caching = caching;
    cfg.workload.arrival = ArrivalSpec::Throughput { ceiling: 1.0 };
    cfg.workload.output_tokens = LengthDist::Constant { tokens: 4 };
    if let PromptSourceSpec::Synthetic { prefixes, .. } = &mut cfg.workload.source {
        *prefixes = SharedPrefixSpec {
            num_prefixes: 1,
            prefix_len: LengthDist::Constant { tokens: prompt_tokens },
            suffix_len: LengthDist::Constant { tokens: 0 },
        };
    }
    cfg
}

fn burst(strategy: Strategy, seed: u64, duration_s: f64) -> SimConfig {
    let mut cfg = SimConfig::from_toml_str(BURST).unwrap();
    cfg.policy.strategy = strategy;
    cfg.seed = seed;
    cfg.duration_s = duration_s;
    cfg
}

#[test]
fn zero_workload_only_gossips() {
    let mut cfg = single_region(10, 1.0, true);
    cfg.workload.arrival = ArrivalSpec::Throughput { ceiling: 0.5 };
    let out = run(&cfg).unwrap();
    assert!(out.traces.is_empty());
    assert!(!out.event_log.is_empty());
    assert!(out.event_log.iter().all(|l| l.contains("\"event\":\"gossip_refresh\"")));
    assert_eq!(out.report.metrics.ttft_ms.count, 0);
}

#[test]
fn single_request_ttft() {
    let out = run(&single_region(500, 1.0, true)).unwrap();
    assert_eq!(out.traces.len(), 1);
    assert_eq!(out.traces[0].ttft_us(), Some(197_620));
    assert_eq!(out.report.metrics.ttft_ms.median, Some(197.62));
    assert_eq!(out.traces[0].outcome, Outcome::Completed);
}

#[test]
fn seeds_do_not_matter_without_noise() {
    let mut a = single_region(300, 3.0, true);
    let mut b = a.clone();
    a.seed = 1;
    b.seed = 2;
    let (ra, rb) = (run(&a).unwrap().report, run(&b).unwrap().report);
    assert_eq!(ra.metrics, rb.metrics);
}

#[test]
fn repeated_prompt_skips_prefill() {
    let cached = run(&single_region(500, 2.0, true)).unwrap();
    let cold = run(&single_region(500, 2.0, false)).unwrap();
    let prefill = |o: &SimOutput, i: usize| {
        let t = &o.traces[i];
        t.first_token_us.unwrap() - t.prefill_start_us.unwrap()
    };
    assert_eq!(prefill(&cached, 1), 150_720);
    assert_eq!(cached.traces[1].cached_tokens, 500);
    assert_eq!(prefill(&cold, 1) - prefill(&cached, 1), 46_900);
}

#[test]
fn germany_forward_scenario() {
    let cfg = SimConfig::from_toml_str(GERMANY).unwrap();
    let out = run(&cfg).unwrap();
    let t = &out.traces[0];
    assert_eq!(t.decisions[0].kind, DecisionKind::Forward(RegionId::new("germany")));
    assert_eq!(t.hops.len(), 2);
    assert_eq!(t.hops[1].ingress_us - t.hops[0].ingress_us, 281_000);
    let costs: BTreeMap<&str, f64> =
        t.decisions[0].candidates.iter().map(|c| (c.region.as_str(), c.breakdown.total_ms)).collect();
    assert!((costs["germany"] - 290.32).abs() < 1e-9);
    assert!((costs["israel"] - 388.04).abs() < 1e-9);
    assert!((costs["us-west"] - 312.22).abs() < 1e-9);
    let log = out.event_log_jsonl();
    assert!(log.contains(r#""decision":{"kind":"forward","target":"germany"}"#));
}

#[test]
fn rtt_ema_seeds_and_converges() {
    assert_eq!(rtt_ema(None, 281.0), 281.0);
    let mut v = 560.0;
    for _ in 0..20 {
        v = rtt_ema(Some(v), 281.0);
    }
    assert!((v - 281.0).abs() / 281.0 < 0.01);
}

#[test]
fn gossip_measures_configured_latency() {
    let out = run(&burst(Strategy::Gorgo, 1, 2.0)).unwrap();
    let line = out
        .event_log
        .iter()
        .find(|l| l.contains("gossip_deliver") && l.contains(r#""from":"us-west","to":"germany""#))
        .unwrap();
    assert!(line.contains(r#""rtt_ms":281.0"#), "{line}");
}

fn check_invariants(out: &SimOutput, max_hops: u32) {
    let r = &out.report;
    assert_eq!(r.injected, r.completed + r.rejected + r.in_flight_at_end);
    for t in &out.traces {
        t.validate().unwrap();
        assert!(t.hop_count() <= max_hops, "{t:?}");
        if let Some(ttft) = t.ttft_us() {
            // network + queueing + prefill, exactly
            let prefill = t.first_token_us.unwrap() - t.prefill_start_us.unwrap();
            let queue = t.prefill_start_us.unwrap() - t.hops.last().unwrap().ingress_us;
            assert_eq!(t.network_us() + queue + prefill, ttft);
        }
    }
}

#[test]
fn invariants_hold_for_every_strategy() {
    for s in Strategy::ALL {
        let cfg = burst(s, 3, 15.0);
        let out = run(&cfg).unwrap();
        assert!(out.report.injected > 50);
        assert_eq!(out.report.in_flight_at_end, 0);
        check_invariants(&out, cfg.policy.max_hops);
    }
}

#[test]
fn runs_are_deterministic() {
    for s in [Strategy::Gorgo, Strategy::GorgoProxy] {
        let mut cfg = burst(s, 11, 10.0);
        cfg.network.jitter_fraction = 0.1;
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        assert_eq!(a.event_log, b.event_log);
        assert_eq!(a.report.to_json(), b.report.to_json());
    }
}

#[test]
fn jittered_hops_stay_within_bounds() {
    let mut cfg = burst(Strategy::LeastLoad, 5, 10.0);
    cfg.network.jitter_fraction = 0.1;
    let out = run(&cfg).unwrap();
    let m = cfg.latency_matrix().unwrap();
    let pos: BTreeMap<&str, usize> = cfg.regions.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut forwards = 0;
    for t in &out.traces {
        for w in t.hops.windows(2) {
            let base = m[pos[w[0].region.as_str()]][pos[w[1].region.as_str()]] * 1000.0;
            let gap = (w[1].ingress_us - w[0].ingress_us) as f64;
            assert!(gap >= 0.9 * base - 1.0 && gap <= 1.1 * base + 1.0);
            forwards += 1;
        }
    }
    assert!(forwards > 0);
}

#[test]
fn closed_loop_keeps_n_in_flight() {
    let mut cfg = burst(Strategy::Gorgo, 2, 5.0);
    cfg.workload.arrival = ArrivalSpec::Concurrent { n: 10 };
    let out = run(&cfg).unwrap();
    // replay arrivals and terminal events: in flight stays at 10 until the horizon
    let mut events: Vec<(u64, i64)> = Vec::new();
    for t in &out.traces {
        events.push((t.created_us, 1));
        let end = t.completed_us.expect("drained");
        events.push((end, -1));
    }
    events.sort();
    let mut level = 0i64;
    let mut i = 0;
    while i < events.len() {
        let at = events[i].0;
        while i < events.len() && events[i].0 == at {
            level += events[i].1;
            i += 1;
        }
        if at < 5_000_000 {
            assert_eq!(level, 10, "at {at}");
        }
    }
}

#[test]
fn throughput_fills_every_queue() {
    let mut cfg = burst(Strategy::LeastLoad, 1, 3.0);
    cfg.workload.arrival = ArrivalSpec::Throughput { ceiling: 1000.0 };
    cfg.telemetry.event_log = false;
    let out = run(&cfg).unwrap();
    assert!(out.traces.windows(2).all(|w| w[0].created_us <= w[1].created_us));
    for r in &out.report.regions {
        assert!(r.queue_depth.iter().any(|q| q.1 > 0), "{} never queued", r.region);
    }
}

#[test]
fn no_drain_leaves_requests_in_flight() {
    let mut cfg = burst(Strategy::Gorgo, 1, 5.0);
    cfg.drain = false;
    let out = run(&cfg).unwrap();
    assert!(out.report.in_flight_at_end > 0);
    check_invariants(&out, cfg.policy.max_hops);
}

#[test]
fn invalid_config_fails_before_running() {
    let mut cfg = burst(Strategy::Gorgo, 1, 5.0);
    cfg.regions[1].backend.max_running = 0;
    assert!(matches!(run(&cfg), Err(SimError::Config(_))));
}
