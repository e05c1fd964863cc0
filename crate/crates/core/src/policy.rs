//! Per-request routing decision.
//!
//! A load balancer serves locally whenever its backend can admit the request
//! right away. Otherwise, while the request still has hops left, the
//! configured strategy picks among the local queue and the peers:
//!
//! * `LeastLoad` – least pending work.
//! * `PrefixTrie` – longest cached prefix, falling back to least load.
//! * `Gorgo` – lowest estimated TTFT under the additive cost model.
//! * `GorgoProxy` – the same cost model, evaluated once by a central proxy
//!   over every region ([`route_central`]).

use crate::cost::{
    estimate_cost, queue_wait_time, residual_prefill_time, CostBreakdown, CostError, CostParams,
    Freshness, Staleness,
};
use crate::geo::GeoPoint;
use crate::prefix_index::PrefixIndex;
use crate::state::{Micros, PeerSummary, RegionId, RegionState, Token};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no candidate region available")]
    NoneAvailable,
    #[error("every region's queue is full")]
    AllSaturated,
    #[error("no proxy RTT configured for region {0}")]
    MissingRtt(RegionId),
    #[error("hop timestamps must be strictly increasing ({prev} then {next})")]
    HopOrder { prev: Micros, next: Micros },
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LeastLoad,
    PrefixTrie,
    Gorgo,
    GorgoProxy,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::LeastLoad, Strategy::PrefixTrie, Strategy::Gorgo, Strategy::GorgoProxy];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::LeastLoad => "least_load",
            Strategy::PrefixTrie => "prefix_trie",
            Strategy::Gorgo => "gorgo",
            Strategy::GorgoProxy => "gorgo_proxy",
        }
    }

    pub fn is_central(self) -> bool {
        self == Strategy::GorgoProxy
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| PolicyError::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// What "least loaded" means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMetric {
    PendingTokens,
    Requests,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub strategy: Strategy,
    pub max_hops: u32,
    pub running_threshold: u32,
    pub kv_cache_limit: f64,
    /// Per-region cap on queued prompt tokens.
    pub max_queue_tokens: u64,
    pub load_metric: LoadMetric,
    /// Never forward back to a region already on the request's hop trace.
    pub exclude_visited: bool,
    pub cost_params: CostParams,
    pub staleness: Staleness,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            strategy: Strategy::Gorgo,
            max_hops: 2,
            running_threshold: 10,
            kv_cache_limit: 0.9,
            max_queue_tokens: 32_768,
            load_metric: LoadMetric::PendingTokens,
            exclude_visited: true,
            cost_params: CostParams::default(),
            staleness: Staleness::default(),
        }
    }
}

impl PolicyConfig {
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_hops < 1 {
            return Err(PolicyError::InvalidConfig("max_hops must be >= 1".into()));
        }
        if !(self.kv_cache_limit > 0.0 && self.kv_cache_limit <= 1.0) {
            return Err(PolicyError::InvalidConfig("kv_cache_limit must be in (0, 1]".into()));
        }
        if self.staleness.refresh_interval_ms <= 0.0 {
            return Err(PolicyError::InvalidConfig("refresh_interval_ms must be > 0".into()));
        }
        self.cost_params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub region: RegionId,
    pub ingress_at: Micros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub tokens: Arc<[Token]>,
    pub origin: GeoPoint,
    pub created_at: Micros,
    pub hop_trace: Vec<Hop>,
}

impl Request {
    /// A request entering the system at `ingress`.
    pub fn new(
        id: u64,
        tokens: Arc<[Token]>,
        origin: GeoPoint,
        ingress: RegionId,
        created_at: Micros,
    ) -> Self {
        Request {
            id,
            tokens,
            origin,
            created_at,
            hop_trace: vec![Hop { region: ingress, ingress_at: created_at }],
        }
    }

    pub fn prompt_len(&self) -> u64 {
        self.tokens.len() as u64
    }

    /// Load-balancer-to-load-balancer forwards so far.
    pub fn hop_count(&self) -> u32 {
        self.hop_trace.len().saturating_sub(1) as u32
    }

    pub fn current_region(&self) -> &RegionId {
        &self.hop_trace.last().expect("hop trace is never empty").region
    }

    pub fn visited(&self, region: &RegionId) -> bool {
        self.hop_trace.iter().any(|h| &h.region == region)
    }

    pub fn record_hop(&mut self, region: RegionId, at: Micros) -> Result<(), PolicyError> {
        let prev = self.hop_trace.last().map_or(self.created_at, |h| h.ingress_at);
        if at <= prev {
            return Err(PolicyError::HopOrder { prev, next: at });
        }
        self.hop_trace.push(Hop { region, ingress_at: at });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCause {
    /// Local queue full and no hops left.
    QueueFull,
    /// Local queue full and no peer could be scored.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target")]
pub enum DecisionKind {
    ServeLocal,
    Forward(RegionId),
    QueueLocal,
    Reject(RejectCause),
}

/// One scored candidate, kept for telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub region: RegionId,
    pub local: bool,
    pub overlap_tokens: u64,
    pub breakdown: CostBreakdown,
    pub freshness: Freshness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub breakdown: Vec<CandidateCost>,
    /// Estimated cost of the chosen option; `None` on rejection.
    pub chosen_cost: Option<f64>,
}

pub fn local_has_capacity(state: &RegionState, cfg: &PolicyConfig) -> bool {
    state.running_requests < cfg.running_threshold && state.kv_cache_used_fraction < cfg.kv_cache_limit
}

fn load_of(s: &PeerSummary, metric: LoadMetric) -> u64 {
    match metric {
        LoadMetric::PendingTokens => s.state.pending_tokens(),
        LoadMetric::Requests => u64::from(s.state.running_requests + s.state.waiting_requests),
    }
}

/// Least pending work; ties go to the lower RTT, then the smaller id.
pub fn select_peer_least_load(
    peers: &[PeerSummary],
    metric: LoadMetric,
) -> Result<RegionId, PolicyError> {
    peers
        .iter()
        .min_by(|a, b| {
            load_of(a, metric)
                .cmp(&load_of(b, metric))
                .then_with(|| a.rtt_ms.total_cmp(&b.rtt_ms))
                .then_with(|| a.region_id.cmp(&b.region_id))
        })
        .map(|p| p.region_id.clone())
        .ok_or(PolicyError::NoneAvailable)
}

/// Longest cached prefix; ties go to the smaller id. With no overlap
/// anywhere, defers to [`select_peer_least_load`].
pub fn select_peer_prefix_trie(
    tokens: &[Token],
    peers: &[PeerSummary],
    index: &PrefixIndex,
    metric: LoadMetric,
) -> Result<RegionId, PolicyError> {
    let best = peers
        .iter()
        .map(|p| (index.overlap_for_node(tokens, &p.region_id), &p.region_id))
        .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)))
        .ok_or(PolicyError::NoneAvailable)?;
    if best.0 == 0 {
        return select_peer_least_load(peers, metric);
    }
    Ok(best.1.clone())
}

fn cmp_candidates(a: &CandidateCost, b: &CandidateCost) -> Ordering {
    a.breakdown
        .total_ms
        .total_cmp(&b.breakdown.total_ms)
        .then_with(|| a.breakdown.network_ms.total_cmp(&b.breakdown.network_ms))
        .then_with(|| a.region.cmp(&b.region))
}

fn score(
    summary: &PeerSummary,
    local: bool,
    tokens: &[Token],
    index: &PrefixIndex,
    params: &CostParams,
    now: Micros,
    staleness: &Staleness,
) -> Result<CandidateCost, CostError> {
    let overlap = index.overlap_for_node(tokens, &summary.region_id) as u64;
    let est = estimate_cost(summary, tokens.len() as u64, overlap, params, now, staleness)?;
    Ok(CandidateCost {
        region: summary.region_id.clone(),
        local,
        overlap_tokens: overlap,
        breakdown: est.breakdown,
        freshness: est.freshness,
    })
}

fn local_summary(local: &RegionState, now: Micros) -> PeerSummary {
    PeerSummary::new(local.clone(), 0.0, now)
}

/// Cost-model argmin over the peers plus, when given, the local queue
/// (scored with zero network latency). Expired peer summaries are skipped.
/// Ties go to the lower network latency, then the smaller id.
pub fn select_peer_gorgo(
    tokens: &[Token],
    local: Option<&RegionState>,
    peers: &[PeerSummary],
    index: &PrefixIndex,
    params: &CostParams,
    staleness: &Staleness,
    now: Micros,
) -> Result<(RegionId, Vec<CandidateCost>), PolicyError> {
    let mut table = Vec::with_capacity(peers.len() + 1);
    if let Some(local) = local {
        table.push(score(&local_summary(local, now), true, tokens, index, params, now, staleness)?);
    }
    for p in peers {
        let c = score(p, false, tokens, index, params, now, staleness)?;
        if c.freshness != Freshness::Expired {
            table.push(c);
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| cmp_candidates(a, b))
        .map(|c| c.region.clone())
        .ok_or(PolicyError::NoneAvailable)?;
    Ok((best, table))
}

/// The per-request handler of a regional load balancer.
pub fn handle_request(
    req: &Request,
    local: &RegionState,
    peers: &[PeerSummary],
    index: &PrefixIndex,
    cfg: &PolicyConfig,
    now: Micros,
) -> Result<Decision, PolicyError> {
    let params = &cfg.cost_params;
    let staleness = &cfg.staleness;
    let tokens = &req.tokens[..];
    let local_cand = score(&local_summary(local, now), true, tokens, index, params, now, staleness)?;

    if local_has_capacity(local, cfg) {
        return Ok(Decision {
            kind: DecisionKind::ServeLocal,
            chosen_cost: Some(local_cand.breakdown.total_ms),
            breakdown: vec![local_cand],
        });
    }

    let local_room = local.waiting_tokens + req.prompt_len() <= cfg.max_queue_tokens;
    if req.hop_count() >= cfg.max_hops {
        return Ok(if local_room {
            Decision {
                kind: DecisionKind::QueueLocal,
                chosen_cost: Some(local_cand.breakdown.total_ms),
                breakdown: vec![local_cand],
            }
        } else {
            Decision {
                kind: DecisionKind::Reject(RejectCause::QueueFull),
                chosen_cost: None,
                breakdown: vec![local_cand],
            }
        });
    }

    let eligible: Vec<PeerSummary> = peers
        .iter()
        .filter(|p| p.region_id != local.region_id)
        .filter(|p| !(cfg.exclude_visited && req.visited(&p.region_id)))
        .filter(|p| staleness.classify(p.age_us(now)) != Freshness::Expired)
        .cloned()
        .collect();

    // The strategy chooses among the peers and (if it has room) the local
    // queue, which competes as a zero-latency candidate.
    let mut options = eligible.clone();
    if local_room {
        options.push(local_summary(local, now));
    }
    let mut table = Vec::with_capacity(options.len());
    if local_room {
        table.push(local_cand.clone());
    }
    for p in &eligible {
        table.push(score(p, false, tokens, index, params, now, staleness)?);
    }

    let chosen = match cfg.strategy {
        Strategy::LeastLoad => select_peer_least_load(&options, cfg.load_metric),
        Strategy::PrefixTrie => select_peer_prefix_trie(tokens, &options, index, cfg.load_metric),
        Strategy::Gorgo | Strategy::GorgoProxy => select_peer_gorgo(
            tokens,
            local_room.then_some(local),
            &eligible,
            index,
            params,
            staleness,
            now,
        )
        .map(|(id, _)| id),
    };

    let chosen = match chosen {
        Ok(id) => id,
        Err(PolicyError::NoneAvailable) => {
            return Ok(Decision {
                kind: DecisionKind::Reject(RejectCause::Saturated),
                chosen_cost: None,
                breakdown: if table.is_empty() { vec![local_cand] } else { table },
            });
        }
        Err(e) => return Err(e),
    };
    let chosen_cost = table.iter().find(|c| c.region == chosen).map(|c| c.breakdown.total_ms);
    let kind = if chosen == local.region_id {
        DecisionKind::QueueLocal
    } else {
        DecisionKind::Forward(chosen)
    };
    Ok(Decision { kind, breakdown: table, chosen_cost })
}

/// Single-shot cost-model routing from a central proxy that sees every
/// region's queue and a global prefix index. Regions whose queue cannot take
/// the request are skipped; if that leaves nothing the caller should hold the
/// request and retry.
pub fn route_central(
    tokens: &[Token],
    states: &[RegionState],
    global_index: &PrefixIndex,
    rtt_from_proxy: &BTreeMap<RegionId, f64>,
    cfg: &PolicyConfig,
) -> Result<(RegionId, Vec<CandidateCost>), PolicyError> {
    if states.is_empty() {
        return Err(PolicyError::NoneAvailable);
    }
    let t_p = cfg.cost_params.effective_t_p();
    let l_p = tokens.len() as u64;
    let mut table = Vec::with_capacity(states.len());
    for st in states {
        if st.waiting_tokens + l_p > cfg.max_queue_tokens {
            continue;
        }
        let rtt = *rtt_from_proxy
            .get(&st.region_id)
            .ok_or_else(|| PolicyError::MissingRtt(st.region_id.clone()))?;
        let overlap = global_index.overlap_for_node(tokens, &st.region_id) as u64;
        let breakdown = CostBreakdown::new(
            rtt.max(0.0),
            residual_prefill_time(l_p, overlap, t_p)?,
            queue_wait_time(st.pending_tokens(), t_p, cfg.cost_params.q_s),
        );
        table.push(CandidateCost {
            region: st.region_id.clone(),
            local: false,
            overlap_tokens: overlap,
            breakdown,
            freshness: Freshness::Fresh,
        });
    }
    let best = table
        .iter()
        .min_by(|a, b| cmp_candidates(a, b))
        .map(|c| c.region.clone())
        .ok_or(PolicyError::AllSaturated)?;
    Ok((best, table))
}
