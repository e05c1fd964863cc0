//! Per-request traces, summary statistics, run reports and policy
//! comparisons.

use crate::policy::{CandidateCost, DecisionKind, RejectCause};
use crate::state::{Micros, RegionId};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TelemetryError {
    #[error("request {id}: {what} at {at} precedes {prev}")]
    OutOfOrder { id: u64, what: &'static str, at: Micros, prev: Micros },
    #[error("request {id}: already finalized")]
    Finalized { id: u64 },
    #[error("need at least two reports")]
    TooFewReports,
    #[error("no report labelled {0}")]
    UnknownBaseline(String),
    #[error("config digest mismatch: {label} has {got}, baseline {baseline_label} has {expected}")]
    ConfigMismatch { label: String, got: String, baseline_label: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHop {
    pub region: RegionId,
    pub ingress_us: Micros,
    /// When the request left this region's load balancer, if forwarded.
    pub egress_us: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopDecision {
    pub region: RegionId,
    pub at_us: Micros,
    pub kind: DecisionKind,
    pub chosen_cost: Option<f64>,
    pub candidates: Vec<CandidateCost>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    InFlight,
    Completed,
    Rejected(RejectCause),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub id: u64,
    pub created_us: Micros,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub fallback_origin: bool,
    pub hops: Vec<TraceHop>,
    pub decisions: Vec<HopDecision>,
    pub admitted_us: Option<Micros>,
    pub prefill_start_us: Option<Micros>,
    pub first_token_us: Option<Micros>,
    pub completed_us: Option<Micros>,
    pub cached_tokens: u64,
    pub outcome: Outcome,
}

impl RequestTrace {
    pub fn new(id: u64, created_us: Micros, prompt_tokens: u64, output_tokens: u64) -> Self {
        RequestTrace {
            id,
            created_us,
            prompt_tokens,
            output_tokens,
            fallback_origin: false,
            hops: Vec::new(),
            decisions: Vec::new(),
            admitted_us: None,
            prefill_start_us: None,
            first_token_us: None,
            completed_us: None,
            cached_tokens: 0,
            outcome: Outcome::InFlight,
        }
    }

    fn last_ts(&self) -> Micros {
        self.hops.last().map_or(self.created_us, |h| h.egress_us.unwrap_or(h.ingress_us))
    }

    fn check(&self, what: &'static str, at: Micros, prev: Micros) -> Result<(), TelemetryError> {
        if at < prev {
            return Err(TelemetryError::OutOfOrder { id: self.id, what, at, prev });
        }
        Ok(())
    }

    fn check_open(&self) -> Result<(), TelemetryError> {
        match self.outcome {
            Outcome::InFlight => Ok(()),
            _ => Err(TelemetryError::Finalized { id: self.id }),
        }
    }

    /// Appends a hop. The first hop may coincide with creation; later hops
    /// must be strictly after the previous one.
    pub fn record_hop(&mut self, region: RegionId, ingress_us: Micros) -> Result<(), TelemetryError> {
        self.check_open()?;
        let prev = self.last_ts();
        self.check("hop ingress", ingress_us, prev)?;
        if !self.hops.is_empty() && ingress_us == self.hops.last().unwrap().ingress_us {
            return Err(TelemetryError::OutOfOrder { id: self.id, what: "hop ingress", at: ingress_us, prev });
        }
        self.hops.push(TraceHop { region, ingress_us, egress_us: None });
        Ok(())
    }

    pub fn record_egress(&mut self, at: Micros) -> Result<(), TelemetryError> {
        self.check_open()?;
        let ingress = self.hops.last().map_or(self.created_us, |h| h.ingress_us);
        self.check("hop egress", at, ingress)?;
        if let Some(h) = self.hops.last_mut() {
            h.egress_us = Some(at);
        }
        Ok(())
    }

    pub fn record_admission(&mut self, at: Micros) -> Result<(), TelemetryError> {
        self.check_open()?;
        self.check("admission", at, self.last_ts())?;
        self.admitted_us = Some(at);
        Ok(())
    }

    pub fn record_first_token(&mut self, prefill_start: Micros, at: Micros) -> Result<(), TelemetryError> {
        self.check_open()?;
        let admitted = self.admitted_us.unwrap_or(self.last_ts());
        self.check("prefill start", prefill_start, admitted)?;
        self.check("first token", at, prefill_start)?;
        self.prefill_start_us = Some(prefill_start);
        self.first_token_us = Some(at);
        Ok(())
    }

    /// Marks the request complete. Requires a first token.
    pub fn finalize(&mut self, completed_us: Micros) -> Result<(), TelemetryError> {
        self.check_open()?;
        let first = self.first_token_us.ok_or(TelemetryError::OutOfOrder {
            id: self.id,
            what: "completion without first token",
            at: completed_us,
            prev: 0,
        })?;
        self.check("completion", completed_us, first)?;
        self.completed_us = Some(completed_us);
        self.outcome = Outcome::Completed;
        Ok(())
    }

    pub fn reject(&mut self, cause: RejectCause) -> Result<(), TelemetryError> {
        self.check_open()?;
        self.outcome = Outcome::Rejected(cause);
        Ok(())
    }

    /// Full ordering check: creation ≤ hops (strictly increasing) ≤
    /// admission ≤ prefill start ≤ first token ≤ completion.
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let mut replay = RequestTrace::new(self.id, self.created_us, self.prompt_tokens, self.output_tokens);
        for h in &self.hops {
            replay.record_hop(h.region.clone(), h.ingress_us)?;
            if let Some(e) = h.egress_us {
                replay.record_egress(e)?;
            }
        }
        if let Some(a) = self.admitted_us {
            replay.record_admission(a)?;
        }
        match (self.prefill_start_us, self.first_token_us) {
            (Some(s), Some(f)) => replay.record_first_token(s, f)?,
            (None, None) => {}
            _ => {
                return Err(TelemetryError::OutOfOrder {
                    id: self.id,
                    what: "incomplete prefill record",
                    at: 0,
                    prev: 0,
                })
            }
        }
        if let Some(c) = self.completed_us {
            replay.finalize(c)?;
        }
        Ok(())
    }

    pub fn hop_count(&self) -> u32 {
        self.hops.len().saturating_sub(1) as u32
    }

    pub fn ttft_us(&self) -> Option<Micros> {
        self.first_token_us.map(|f| f - self.created_us)
    }

    pub fn ttft_ms(&self) -> Option<f64> {
        self.ttft_us().map(|t| t as f64 / 1e3)
    }

    /// Time from creation until the request reached its last region.
    pub fn network_us(&self) -> Micros {
        self.hops.last().map_or(0, |h| h.ingress_us - self.created_us)
    }

    pub fn serving_region(&self) -> Option<&RegionId> {
        self.admitted_us.and(self.hops.last().map(|h| &h.region))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdDevKind {
    #[default]
    Population,
    Sample,
}

/// Aggregate statistics. Every field except `count` is `None` for empty
/// input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std_dev: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
}

/// Nearest-rank percentile of ascending `sorted`: the ⌈q·n/100⌉-th value.
pub fn nearest_rank(sorted: &[f64], q: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(q) * n).div_ceil(100).max(1);
    Some(sorted[(rank - 1) as usize])
}

pub fn aggregate(values: &[f64]) -> SummaryStats {
    aggregate_with(values, StdDevKind::Population)
}

pub fn aggregate_with(values: &[f64], kind: StdDevKind) -> SummaryStats {
    let n = values.len();
    if n == 0 {
        return SummaryStats::default();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match kind {
        StdDevKind::Population => n as f64,
        StdDevKind::Sample if n > 1 => (n - 1) as f64,
        StdDevKind::Sample => 1.0,
    };
    let p50 = nearest_rank(&sorted, 50);
    SummaryStats {
        count: n as u64,
        mean: Some(mean),
        median: p50,
        std_dev: Some((ss / denom).sqrt()),
        min: sorted.first().copied(),
        max: sorted.last().copied(),
        p50,
        p90: nearest_rank(&sorted, 90),
        p95: nearest_rank(&sorted, 95),
        p99: nearest_rank(&sorted, 99),
    }
}

impl SummaryStats {
    pub fn percentiles_ordered(&self) -> bool {
        let chain = [self.min, self.p50, self.p90, self.p95, self.p99, self.max];
        if self.count == 0 {
            return chain.iter().all(Option::is_none);
        }
        let v: Option<Vec<f64>> = chain.iter().copied().collect();
        v.is_some_and(|v| v.windows(2).all(|w| w[0] <= w[1])) && self.median == self.p50
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TtftMs,
    ItlMs,
    RequestLatencyS,
    TpotMs,
    TokensPerS,
    OutputTokensPerS,
    PromptTokensPerS,
    RequestsPerS,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::TtftMs,
        Metric::ItlMs,
        Metric::RequestLatencyS,
        Metric::TpotMs,
        Metric::TokensPerS,
        Metric::OutputTokensPerS,
        Metric::PromptTokensPerS,
        Metric::RequestsPerS,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::TtftMs => "TTFT (ms)",
            Metric::ItlMs => "Inter-Token Latency (ms)",
            Metric::RequestLatencyS => "Request Latency (s)",
            Metric::TpotMs => "Time per Output Token (ms)",
            Metric::TokensPerS => "Tokens/s",
            Metric::OutputTokensPerS => "Output Tokens/s",
            Metric::PromptTokensPerS => "Prompt Tokens/s",
            Metric::RequestsPerS => "Requests/s",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::TtftMs => "ttft_ms",
            Metric::ItlMs => "itl_ms",
            Metric::RequestLatencyS => "request_latency_s",
            Metric::TpotMs => "tpot_ms",
            Metric::TokensPerS => "tokens_per_s",
            Metric::OutputTokensPerS => "output_tokens_per_s",
            Metric::PromptTokensPerS => "prompt_tokens_per_s",
            Metric::RequestsPerS => "requests_per_s",
        }
    }

    /// Lower is better.
    pub fn is_latency(self) -> bool {
        matches!(self, Metric::TtftMs | Metric::ItlMs | Metric::RequestLatencyS | Metric::TpotMs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub ttft_ms: SummaryStats,
    pub itl_ms: SummaryStats,
    pub request_latency_s: SummaryStats,
    pub tpot_ms: SummaryStats,
    pub tokens_per_s: SummaryStats,
    pub output_tokens_per_s: SummaryStats,
    pub prompt_tokens_per_s: SummaryStats,
    pub requests_per_s: SummaryStats,
}

impl MetricSet {
    pub fn get(&self, m: Metric) -> &SummaryStats {
        match m {
            Metric::TtftMs => &self.ttft_ms,
            Metric::ItlMs => &self.itl_ms,
            Metric::RequestLatencyS => &self.request_latency_s,
            Metric::TpotMs => &self.tpot_ms,
            Metric::TokensPerS => &self.tokens_per_s,
            Metric::OutputTokensPerS => &self.output_tokens_per_s,
            Metric::PromptTokensPerS => &self.prompt_tokens_per_s,
            Metric::RequestsPerS => &self.requests_per_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionId,
    /// Requests admitted to this region's backend.
    pub requests_handled: u64,
    pub forwarded_out: u64,
    pub rejected: u64,
    /// `(t_us, waiting_requests)` samples.
    pub queue_depth: Vec<(Micros, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub strategy: String,
    pub config_digest: String,
    pub seed: u64,
    pub duration_s: f64,
    pub injected: u64,
    pub completed: u64,
    pub rejected: u64,
    pub in_flight_at_horizon: u64,
    /// Requests still unfinished when the run stopped.
    pub in_flight_at_end: u64,
    pub fallback_origins: u64,
    pub max_hop_count: u32,
    pub metrics: MetricSet,
    pub regions: Vec<RegionReport>,
}

/// Everything a report needs besides the traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub strategy: String,
    pub config_digest: String,
    pub seed: u64,
    pub duration_s: f64,
    pub in_flight_at_horizon: u64,
    pub in_flight_at_end: u64,
    pub regions: Vec<RegionReport>,
}

/// Per-second totals over tumbling 1 s windows covering `[0, end)`.
fn per_second(events: &[(Micros, f64)], end_us: Micros) -> Vec<f64> {
    let windows = end_us.div_ceil(1_000_000).max(1) as usize;
    let mut out = vec![0.0; windows];
    for &(t, v) in events {
        let w = ((t / 1_000_000) as usize).min(windows - 1);
        out[w] += v;
    }
    out
}

pub fn build_report(traces: &[RequestTrace], itl_gaps_ms: &[f64], meta: ReportMeta) -> RunReport {
    let done: Vec<&RequestTrace> = traces.iter().filter(|t| t.outcome == Outcome::Completed).collect();
    let ttft: Vec<f64> = traces.iter().filter_map(RequestTrace::ttft_ms).collect();
    let latency_s: Vec<f64> = done
        .iter()
        .map(|t| (t.completed_us.unwrap() - t.created_us) as f64 / 1e6)
        .collect();
    let tpot: Vec<f64> = done
        .iter()
        .filter(|t| t.output_tokens > 0)
        .map(|t| (t.completed_us.unwrap() - t.created_us) as f64 / 1e3 / t.output_tokens as f64)
        .collect();

    let horizon = (meta.duration_s * 1e6).round() as Micros;
    let end = done.iter().filter_map(|t| t.completed_us).max().unwrap_or(0).max(horizon);
    let completions = |f: &dyn Fn(&RequestTrace) -> f64| -> Vec<f64> {
        let ev: Vec<(Micros, f64)> = done.iter().map(|t| (t.completed_us.unwrap(), f(t))).collect();
        per_second(&ev, end)
    };
    let has_any = !done.is_empty();
    let rate = |v: Vec<f64>| if has_any { aggregate(&v) } else { SummaryStats::default() };

    let metrics = MetricSet {
        ttft_ms: aggregate(&ttft),
        itl_ms: aggregate(itl_gaps_ms),
        request_latency_s: aggregate(&latency_s),
        tpot_ms: aggregate(&tpot),
        tokens_per_s: rate(completions(&|t| (t.prompt_tokens + t.output_tokens) as f64)),
        output_tokens_per_s: rate(completions(&|t| t.output_tokens as f64)),
        prompt_tokens_per_s: rate(completions(&|t| t.prompt_tokens as f64)),
        requests_per_s: rate(completions(&|_| 1.0)),
    };

    RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: meta.strategy,
        config_digest: meta.config_digest,
        seed: meta.seed,
        duration_s: meta.duration_s,
        injected: traces.len() as u64,
        completed: done.len() as u64,
        rejected: traces.iter().filter(|t| matches!(t.outcome, Outcome::Rejected(_))).count() as u64,
        in_flight_at_horizon: meta.in_flight_at_horizon,
        in_flight_at_end: meta.in_flight_at_end,
        fallback_origins: traces.iter().filter(|t| t.fallback_origin).count() as u64,
        max_hop_count: traces.iter().map(RequestTrace::hop_count).max().unwrap_or(0),
        metrics,
        regions: meta.regions,
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Aligned text table, one row per metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "strategy: {}  seed: {}  duration: {} s  injected: {}  completed: {}  rejected: {}  in flight: {}",
            self.strategy,
            self.seed,
            self.duration_s,
            self.injected,
            self.completed,
            self.rejected,
            self.in_flight_at_horizon
        );
        out.push_str(&stats_table(Metric::ALL.iter().map(|&m| (m.label().to_string(), *self.metrics.get(m)))));
        if !self.regions.is_empty() {
            let _ = writeln!(out, "\n{:<16}{:>10}{:>10}{:>10}{:>12}", "Region", "Handled", "Forwarded", "Rejected", "Max queue");
            for r in &self.regions {
                let maxq = r.queue_depth.iter().map(|q| q.1).max().unwrap_or(0);
                let _ = writeln!(
                    out,
                    "{:<16}{:>10}{:>10}{:>10}{:>12}",
                    r.region.as_str(),
                    r.requests_handled,
                    r.forwarded_out,
                    r.rejected,
                    maxq
                );
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn stats_table(rows: impl Iterator<Item = (String, SummaryStats)>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}",
        "Metric", "Mean", "Median", "Std.Dev.", "Min", "Max", "P90", "P95", "P99", "Count"
    );
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{:<28}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}",
            label,
            fmt_opt(s.mean),
            fmt_opt(s.median),
            fmt_opt(s.std_dev),
            fmt_opt(s.min),
            fmt_opt(s.max),
            fmt_opt(s.p90),
            fmt_opt(s.p95),
            fmt_opt(s.p99),
            s.count
        );
    }
    out
}

/// Raw per-request TTFTs for external plotting.
pub fn write_ttft_csv<W: Write>(w: W, traces: &[RequestTrace]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["request_id", "ttft_ms"])?;
    for t in traces {
        if let Some(ms) = t.ttft_ms() {
            wtr.write_record([t.id.to_string(), format!("{ms:.3}")])?;
        }
    }
    wtr.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub metric: Metric,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    /// Improvement factor over the baseline median: baseline/candidate for
    /// latencies, candidate/baseline for rates. Above 1 is better.
    pub median_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub config_digest: String,
    pub rows: Vec<ComparisonRow>,
}

fn improvement(metric: Metric, baseline: Option<f64>, candidate: Option<f64>) -> Option<f64> {
    let (b, c) = (baseline?, candidate?);
    let (num, den) = if metric.is_latency() { (b, c) } else { (c, b) };
    (den != 0.0).then(|| num / den)
}

pub fn compare_policies(reports: &[RunReport], baseline: &str) -> Result<Comparison, TelemetryError> {
    if reports.len() < 2 {
        return Err(TelemetryError::TooFewReports);
    }
    let base = reports
        .iter()
        .find(|r| r.strategy == baseline)
        .ok_or_else(|| TelemetryError::UnknownBaseline(baseline.to_string()))?;
    if let Some(bad) = reports.iter().find(|r| r.config_digest != base.config_digest) {
        return Err(TelemetryError::ConfigMismatch {
            label: bad.strategy.clone(),
            got: bad.config_digest.clone(),
            baseline_label: base.strategy.clone(),
            expected: base.config_digest.clone(),
        });
    }
    let mut rows = Vec::new();
    for r in reports {
        for m in Metric::ALL {
            let (b, c) = (base.metrics.get(m), r.metrics.get(m));
            rows.push(ComparisonRow {
                strategy: r.strategy.clone(),
                metric: m,
                median: c.median,
                mean: c.mean,
                median_ratio: improvement(m, b.median, c.median),
                mean_ratio: improvement(m, b.mean, c.mean),
            });
        }
    }
    Ok(Comparison { baseline: baseline.to_string(), config_digest: base.config_digest.clone(), rows })
}

impl Comparison {
    pub fn row(&self, strategy: &str, metric: Metric) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.metric == metric)
    }

    pub fn strategies(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.strategy.as_str()) {
                out.push(&r.strategy);
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "baseline: {}  config: {}", self.baseline, self.config_digest);
        let _ = writeln!(
            out,
            "{:<28}{:<14}{:>12}{:>12}{:>14}{:>14}",
            "Metric", "Strategy", "Median", "Mean", "Median ratio", "Mean ratio"
        );
        for m in Metric::ALL {
            for r in self.rows.iter().filter(|r| r.metric == m) {
                let ratio = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.2}x"));
                let _ = writeln!(
                    out,
                    "{:<28}{:<14}{:>12}{:>12}{:>14}{:>14}",
                    m.label(),
                    r.strategy,
                    fmt_opt(r.median),
                    fmt_opt(r.mean),
                    ratio(r.median_ratio),
                    ratio(r.mean_ratio)
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartStat {
    Median,
    Mean,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart grid: one panel per metric, one bar per strategy.
pub fn comparison_svg(cmp: &Comparison, stat: ChartStat) -> String {
    let strategies = cmp.strategies();
    let (cols, panel_w, panel_h) = (2usize, 420.0, 220.0);
    let rows = Metric::ALL.len().div_ceil(cols);
    let (w, h) = (cols as f64 * panel_w, rows as f64 * panel_h + 60.0);
    let title = match stat {
        ChartStat::Median => "Median metrics by strategy",
        ChartStat::Mean => "Mean metrics by strategy",
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{title}</text>"#, w / 2.0);
    for (i, name) in strategies.iter().enumerate() {
        let x = 20.0 + i as f64 * 150.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="36" width="12" height="12" fill="{}"/><text x="{}" y="46" font-size="12">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 16.0,
            xml_escape(name)
        );
    }
    for (pi, m) in Metric::ALL.iter().enumerate() {
        let (ox, oy) = ((pi % cols) as f64 * panel_w, 60.0 + (pi / cols) as f64 * panel_h);
        let vals: Vec<f64> = strategies
            .iter()
            .map(|st| {
                cmp.row(st, *m)
                    .and_then(|r| match stat {
                        ChartStat::Median => r.median,
                        ChartStat::Mean => r.mean,
                    })
                    .unwrap_or(0.0)
            })
            .collect();
        let vmax = vals.iter().copied().fold(0.0, f64::max);
        let (plot_x, plot_y, plot_w, plot_h) = (ox + 40.0, oy + 30.0, panel_w - 60.0, panel_h - 70.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#, ox + panel_w / 2.0, oy + 18.0, xml_escape(m.label()));
        let _ = writeln!(
            s,
            r##"<line x1="{plot_x}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##,
            plot_y + plot_h,
            plot_x + plot_w,
            plot_y + plot_h
        );
        let slot = plot_w / vals.len().max(1) as f64;
        for (i, v) in vals.iter().enumerate() {
            let bh = if vmax > 0.0 { v / vmax * plot_h } else { 0.0 };
            let x = plot_x + i as f64 * slot + slot * 0.15;
            let y = plot_y + plot_h - bh;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="{}"/>"#,
                slot * 0.7,
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.1}</text>"#,
                x + slot * 0.35,
                y - 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
