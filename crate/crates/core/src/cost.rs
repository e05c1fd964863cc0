//! Additive TTFT cost model.
//!
//! A candidate region is scored as
//!
//! ```text
//! total = network + t_p * (L_p - L_hit) + q_s * t_p * pending_tokens
//! ```
//!
//! where `network` is the forwarding latency to the candidate (zero for the
//! local region), `L_hit` is the longest cached prefix the candidate holds and
//! `pending_tokens` is the candidate's queued plus in-batch prefill backlog.
//! The per-token prefill time `t_p` comes from a linear fit of TTFT against
//! prompt length ([`fit_prefill_calibration`]).

use crate::state::{Micros, PeerSummary};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

/// Intercept of the reference TTFT-vs-prompt-length fit (ms).
pub const REFERENCE_BASE_LATENCY_MS: f64 = 150.72;
/// Slope of the reference TTFT-vs-prompt-length fit (ms/token).
pub const REFERENCE_PREFILL_MS_PER_TOKEN: f64 = 0.0938;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("cached prefix ({hit} tokens) is longer than the prompt ({prompt} tokens)")]
    OverlapExceedsPrompt { hit: u64, prompt: u64 },
    #[error("invalid cost parameter: {0}")]
    InvalidParams(&'static str),
    #[error("calibration needs at least 2 observations, got {0}")]
    InsufficientData(usize),
    #[error("calibration design is degenerate: every observation has input_tokens = {0}")]
    DegenerateDesign(f64),
    #[error("calibration csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Per-token prefill time (ms/token).
    pub t_p: f64,
    /// Weight on the queue-wait term.
    pub q_s: f64,
    /// Fixed per-request overhead (ms). Identical for every candidate, so it
    /// never changes a ranking; carried for reporting and for the simulator.
    pub base_latency: f64,
    /// Runtime override applied on top of the measured `t_p`.
    pub t_p_multiplier: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            t_p: REFERENCE_PREFILL_MS_PER_TOKEN,
            q_s: 1.0,
            base_latency: REFERENCE_BASE_LATENCY_MS,
            t_p_multiplier: 1.0,
        }
    }
}

impl CostParams {
    pub fn from_calibration(cal: &Calibration) -> Self {
        CostParams {
            t_p: cal.slope,
            base_latency: cal.intercept.max(0.0),
            ..CostParams::default()
        }
    }

    pub fn with_t_p(mut self, t_p: f64) -> Self {
        self.t_p = t_p;
        self
    }

    pub fn with_q_s(mut self, q_s: f64) -> Self {
        self.q_s = q_s;
        self
    }

    /// `t_p` after the runtime multiplier.
    pub fn effective_t_p(&self) -> f64 {
        self.t_p * self.t_p_multiplier
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.t_p.is_finite() && self.t_p > 0.0) {
            return Err(CostError::InvalidParams("t_p must be finite and > 0"));
        }
        if !(self.t_p_multiplier.is_finite() && self.t_p_multiplier > 0.0) {
            return Err(CostError::InvalidParams("t_p_multiplier must be finite and > 0"));
        }
        if !(self.q_s.is_finite() && self.q_s >= 0.0) {
            return Err(CostError::InvalidParams("q_s must be finite and >= 0"));
        }
        if !(self.base_latency.is_finite() && self.base_latency >= 0.0) {
            return Err(CostError::InvalidParams("base_latency must be finite and >= 0"));
        }
        Ok(())
    }
}

/// The three sequential TTFT components of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub network_ms: f64,
    pub prefill_ms: f64,
    pub queue_ms: f64,
    pub total_ms: f64,
}

impl CostBreakdown {
    pub fn new(network_ms: f64, prefill_ms: f64, queue_ms: f64) -> Self {
        CostBreakdown {
            network_ms,
            prefill_ms,
            queue_ms,
            total_ms: network_ms + prefill_ms + queue_ms,
        }
    }
}

/// Prefill time avoided by reusing `l_hit` cached tokens.
pub fn saved_time(l_hit: u64, t_p: f64) -> f64 {
    l_hit as f64 * t_p
}

/// Prefill time still owed after reusing `l_hit` of `l_p` prompt tokens.
pub fn residual_prefill_time(l_p: u64, l_hit: u64, t_p: f64) -> Result<f64, CostError> {
    if l_hit > l_p {
        return Err(CostError::OverlapExceedsPrompt { hit: l_hit, prompt: l_p });
    }
    Ok(l_p as f64 * t_p - saved_time(l_hit, t_p))
}

pub fn queue_wait_time(pending_tokens: u64, t_p: f64, q_s: f64) -> f64 {
    q_s * (pending_tokens as f64 * t_p)
}

/// How old a peer summary may get before it is penalized or dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Staleness {
    pub refresh_interval_ms: f64,
    /// Summaries older than `stale_factor * refresh_interval_ms` get one
    /// refresh interval added to their queue term.
    pub stale_factor: f64,
    /// Summaries older than `exclude_factor * refresh_interval_ms` are not
    /// scored at all.
    pub exclude_factor: f64,
}

impl Default for Staleness {
    fn default() -> Self {
        Staleness {
            refresh_interval_ms: 100.0,
            stale_factor: 5.0,
            exclude_factor: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freshness {
    Fresh,
    Stale,
    Expired,
}

impl Staleness {
    pub fn classify(&self, age_us: Micros) -> Freshness {
        let age_ms = age_us as f64 / 1000.0;
        if age_ms > self.exclude_factor * self.refresh_interval_ms {
            Freshness::Expired
        } else if age_ms > self.stale_factor * self.refresh_interval_ms {
            Freshness::Stale
        } else {
            Freshness::Fresh
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub breakdown: CostBreakdown,
    pub freshness: Freshness,
}

/// Score `candidate` for a request of `request_tokens` tokens of which
/// `overlap_tokens` are already cached there.
///
/// Stale summaries carry a one-refresh-interval queue penalty; expired ones
/// are scored the same way but flagged so the caller can drop them.
pub fn estimate_cost(
    candidate: &PeerSummary,
    request_tokens: u64,
    overlap_tokens: u64,
    params: &CostParams,
    now: Micros,
    staleness: &Staleness,
) -> Result<CostEstimate, CostError> {
    let t_p = params.effective_t_p();
    let prefill_ms = residual_prefill_time(request_tokens, overlap_tokens, t_p)?;
    let mut queue_ms = queue_wait_time(candidate.state.pending_tokens(), t_p, params.q_s);
    let freshness = staleness.classify(candidate.age_us(now));
    if freshness != Freshness::Fresh {
        queue_ms += staleness.refresh_interval_ms;
    }
    Ok(CostEstimate {
        breakdown: CostBreakdown::new(candidate.rtt_ms.max(0.0), prefill_ms, queue_ms),
        freshness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillObservation {
    pub input_tokens: u64,
    pub ttft_ms: f64,
}

/// Linear fit `ttft_ms = intercept + slope * input_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl Calibration {
    pub fn predict(&self, input_tokens: u64) -> f64 {
        self.intercept + self.slope * input_tokens as f64
    }

    /// The published reference fit.
    pub fn reference() -> Self {
        Calibration {
            intercept: REFERENCE_BASE_LATENCY_MS,
            slope: REFERENCE_PREFILL_MS_PER_TOKEN,
            r_squared: 0.9863,
            n: 87,
        }
    }
}

/// Ordinary least squares of TTFT on input tokens.
pub fn fit_prefill_calibration(obs: &[PrefillObservation]) -> Result<Calibration, CostError> {
    let n = obs.len();
    if n < 2 {
        return Err(CostError::InsufficientData(n));
    }
    let nf = n as f64;
    let mean_x = obs.iter().map(|o| o.input_tokens as f64).sum::<f64>() / nf;
    let mean_y = obs.iter().map(|o| o.ttft_ms).sum::<f64>() / nf;

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for o in obs {
        let dx = o.input_tokens as f64 - mean_x;
        let dy = o.ttft_ms - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(CostError::DegenerateDesign(obs[0].input_tokens as f64));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let ss_res: f64 = obs
        .iter()
        .map(|o| {
            let r = o.ttft_ms - (intercept + slope * o.input_tokens as f64);
            r * r
        })
        .sum();
    // constant y is fit perfectly by a flat line
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };

    Ok(Calibration { intercept, slope, r_squared, n })
}

/// Reads `input_tokens,ttft_ms` rows (header required).
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<PrefillObservation>, CostError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CostError::Csv(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn write_observations_csv<W: Write>(
    writer: W,
    obs: &[PrefillObservation],
) -> Result<(), CostError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for o in obs {
        wtr.serialize(o).map_err(|e| CostError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CostError::Csv(e.to_string()))
}
