//! Event queue ordering and the JSONL event log.

use crate::policy::{CandidateCost, DecisionKind, RejectCause};
use crate::state::{Micros, PrefixDigest, RegionId, RegionState};
use serde::Serialize;
use std::cmp::Ordering;

/// Event kinds in same-timestamp processing order: completions free
/// capacity before new work is routed, and admission passes run last so they
/// see every request delivered at that instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestDone,
    PrefillDone,
    GossipDeliver,
    GossipRefresh,
    Arrival,
    ProxyDelivery,
    HopDelivery,
    DecodeTick,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Arrival { req: u64 },
    HopDelivery { req: u64, from: usize, to: usize, proxied: bool },
    ProxyDelivery { req: u64 },
    DecodeTick { region: usize },
    PrefillDone { req: u64, region: usize },
    RequestDone { req: u64, region: usize },
    GossipRefresh { region: usize },
    GossipDeliver { from: usize, to: usize, sent_at: Micros, state: Box<RegionState>, digest: PrefixDigest },
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::Arrival { .. } => EventKind::Arrival,
            Payload::HopDelivery { .. } => EventKind::HopDelivery,
            Payload::ProxyDelivery { .. } => EventKind::ProxyDelivery,
            Payload::DecodeTick { .. } => EventKind::DecodeTick,
            Payload::PrefillDone { .. } => EventKind::PrefillDone,
            Payload::RequestDone { .. } => EventKind::RequestDone,
            Payload::GossipRefresh { .. } => EventKind::GossipRefresh,
            Payload::GossipDeliver { .. } => EventKind::GossipDeliver,
        }
    }

    fn key(&self) -> u64 {
        match *self {
            Payload::Arrival { req }
            | Payload::HopDelivery { req, .. }
            | Payload::ProxyDelivery { req }
            | Payload::PrefillDone { req, .. }
            | Payload::RequestDone { req, .. } => req,
            Payload::DecodeTick { region } | Payload::GossipRefresh { region } => region as u64,
            Payload::GossipDeliver { from, to, .. } => ((to as u64) << 32) | from as u64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub at: Micros,
    pub seq: u64,
    pub payload: Payload,
}

impl Event {
    fn sort_key(&self) -> (Micros, EventKind, u64, u64) {
        (self.at, self.payload.kind(), self.payload.key(), self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.sort_key() == other.sort_key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so `BinaryHeap` pops the earliest event.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.sort_key().cmp(&self.sort_key())
    }
}

/// One event-log line. Serialized with `t_us` first, then `event`, then the
/// variant fields in declaration order.
#[derive(Debug, Clone, Serialize)]
pub struct LogLine {
    pub t_us: Micros,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Arrival {
        req: u64,
        ingress: RegionId,
        prompt_tokens: u64,
        output_tokens: u64,
        origin_lat: f64,
        origin_lon: f64,
        fallback_origin: bool,
    },
    HopDelivery {
        req: u64,
        from: RegionId,
        to: RegionId,
        hop: u32,
    },
    Decision {
        req: u64,
        region: RegionId,
        decision: DecisionKind,
        chosen_cost_ms: Option<f64>,
        candidates: Vec<CandidateCost>,
    },
    ProxyHold {
        req: u64,
        retry_at_us: Micros,
    },
    AdmitToBatch {
        req: u64,
        region: RegionId,
        cached_tokens: u64,
        prefill_start_us: Micros,
    },
    PrefillDone {
        req: u64,
        region: RegionId,
        ttft_us: Micros,
        evicted_blocks: usize,
    },
    RequestDone {
        req: u64,
        region: RegionId,
    },
    Rejected {
        req: u64,
        region: RegionId,
        cause: RejectCause,
    },
    GossipRefresh {
        region: RegionId,
        running_requests: u32,
        waiting_requests: u32,
        pending_tokens: u64,
        digest_prefixes: usize,
    },
    GossipDeliver {
        from: RegionId,
        to: RegionId,
        sent_us: Micros,
        rtt_ms: f64,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BinaryHeap;

    #[test]
    fn heap_pops_in_time_then_kind_order() {
        let mut h = BinaryHeap::new();
        h.push(Event { at: 5, seq: 0, payload: Payload::DecodeTick { region: 0 } });
        h.push(Event { at: 5, seq: 1, payload: Payload::RequestDone { req: 3, region: 0 } });
        h.push(Event { at: 1, seq: 2, payload: Payload::Arrival { req: 9 } });
        h.push(Event { at: 5, seq: 3, payload: Payload::Arrival { req: 1 } });
        let order: Vec<EventKind> = std::iter::from_fn(|| h.pop()).map(|e| e.payload.kind()).collect();
        assert_eq!(
            order,
            [EventKind::Arrival, EventKind::RequestDone, EventKind::Arrival, EventKind::DecodeTick]
        );
    }

    #[test]
    fn log_field_order_is_stable() {
        let line = LogLine {
            t_us: 7,
            entry: LogEntry::RequestDone { req: 1, region: RegionId::new("a") },
        };
        assert_eq!(
            serde_json::to_string(&line).unwrap(),
            r#"{"t_us":7,"event":"request_done","req":1,"region":"a"}"#
        );
    }
}
