//! Mirrored serving state shared by the cost model, the policy engine and the
//! simulator.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Token id. Prompts are sequences of these.
pub type Token = u32;

/// Simulated or wall timestamp in microseconds.
pub type Micros = u64;

/// Region (load balancer + serving backend) identifier.
///
/// Ordered lexicographically; every tie-break in the routing code relies on
/// that ordering.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(Arc<str>);

impl RegionId {
    pub fn new(id: impl AsRef<str>) -> Self {
        RegionId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RegionId {
    fn from(s: &str) -> Self {
        RegionId::new(s)
    }
}

/// Admission state a load balancer mirrors from its serving runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionState {
    pub region_id: RegionId,
    pub running_requests: u32,
    /// Prefill tokens still outstanding for requests already in the running batch.
    pub running_tokens: u64,
    pub waiting_requests: u32,
    pub waiting_tokens: u64,
    pub kv_cache_used_fraction: f64,
    /// Per-token prefill time reported by the runtime (ms/token).
    pub t_p_measured: f64,
}

impl RegionState {
    pub fn idle(region_id: impl Into<RegionId>, t_p_measured: f64) -> Self {
        RegionState {
            region_id: region_id.into(),
            running_requests: 0,
            running_tokens: 0,
            waiting_requests: 0,
            waiting_tokens: 0,
            kv_cache_used_fraction: 0.0,
            t_p_measured,
        }
    }

    /// Tokens a newly admitted request would queue behind.
    pub fn pending_tokens(&self) -> u64 {
        self.running_tokens + self.waiting_tokens
    }
}

impl From<String> for RegionId {
    fn from(s: String) -> Self {
        RegionId::new(s)
    }
}

/// Prefixes a region cached and evicted since its previous summary.
/// Receivers fold these into their own prefix index under the sender's id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefixDigest {
    pub prefixes: Vec<Arc<[Token]>>,
    #[serde(default)]
    pub evicted: Vec<Arc<[Token]>>,
}

/// A peer table entry: the last summary received from a peer plus the RTT
/// this load balancer measured to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerSummary {
    pub region_id: RegionId,
    pub rtt_ms: f64,
    pub state: RegionState,
    pub prefix_summary: PrefixDigest,
    pub as_of: Micros,
}

impl PeerSummary {
    pub fn new(state: RegionState, rtt_ms: f64, as_of: Micros) -> Self {
        PeerSummary {
            region_id: state.region_id.clone(),
            rtt_ms,
            state,
            prefix_summary: PrefixDigest::default(),
            as_of,
        }
    }

    pub fn age_us(&self, now: Micros) -> Micros {
        now.saturating_sub(self.as_of)
    }
}
