//! Mock continuous-batching backend.
//!
//! Requests wait in a FIFO queue and join the batch on iteration boundaries
//! (multiples of the inter-token latency). Prefill of admitted requests runs
//! on one engine in admission order: the per-token part of the calibrated
//! prefill time occupies the engine, the fixed intercept does not. The first
//! token is emitted when a request's prefill finishes; the batch slot is held
//! until its last output token.

use super::config::BackendModel;
use super::network::ms_to_us;
use crate::prefix_index::{IndexConfig, PrefixIndex};
use crate::state::{Micros, RegionId, RegionState, Token};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct Queued {
    pub req: u64,
    pub tokens: Arc<[Token]>,
    pub enqueued_at: Micros,
}

/// One admission made on an iteration boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub req: u64,
    pub admitted_at: Micros,
    pub cached_tokens: u64,
    pub prefill_start: Micros,
    pub first_token_at: Micros,
}

#[derive(Debug, Clone)]
struct InPrefill {
    tokens: Arc<[Token]>,
    residual: u64,
}

#[derive(Debug, Clone)]
pub struct Backend {
    pub id: RegionId,
    pub model: BackendModel,
    tick_us: Micros,
    waiting: VecDeque<Queued>,
    waiting_tokens: u64,
    /// Requests holding a batch slot, with their prompt length.
    slots: BTreeMap<u64, u64>,
    prefilling: BTreeMap<u64, InPrefill>,
    prefill_tokens: u64,
    engine_free_at: Micros,
    cache: PrefixIndex,
    tick_pending: Option<Micros>,
    clock: u64,
}

impl Backend {
    pub fn new(id: RegionId, model: BackendModel, block_size: usize) -> Self {
        let capacity_blocks = (model.kv_capacity_tokens as usize / block_size).max(1);
        Backend {
            id,
            tick_us: ms_to_us(model.itl_ms).max(1),
            waiting: VecDeque::new(),
            waiting_tokens: 0,
            slots: BTreeMap::new(),
            prefilling: BTreeMap::new(),
            prefill_tokens: 0,
            engine_free_at: 0,
            cache: PrefixIndex::new(IndexConfig { block_size, capacity_blocks }),
            tick_pending: None,
            clock: 0,
            model,
        }
    }

    pub fn tick_us(&self) -> Micros {
        self.tick_us
    }

    /// First iteration boundary at or after `now`.
    pub fn next_boundary(&self, now: Micros) -> Micros {
        now.div_ceil(self.tick_us) * self.tick_us
    }

    fn free_slots(&self) -> u32 {
        let held = self.slots.len() as u32 + self.model.background.running_requests;
        self.model.max_running.saturating_sub(held)
    }

    /// Prefill tokens the engine has yet to process at `now`.
    pub fn engine_backlog_tokens(&self, now: Micros) -> u64 {
        let left_us = self.engine_free_at.saturating_sub(now) as f64;
        (left_us / (self.model.prefill.slope * 1000.0)).ceil() as u64
    }

    /// Runtime state as its load balancer sees it at `now`. Queued requests
    /// that will take a free slot at the next boundary count as running.
    pub fn state(&self, now: Micros) -> RegionState {
        let bg = self.model.background;
        let joining = (self.free_slots() as usize).min(self.waiting.len());
        let joining_tokens: u64 = self.waiting.iter().take(joining).map(|q| q.tokens.len() as u64).sum();
        let active_kv: u64 = self.slots.values().sum::<u64>() + joining_tokens;
        let backlog = self.engine_backlog_tokens(now).min(self.prefill_tokens);
        RegionState {
            region_id: self.id.clone(),
            running_requests: self.slots.len() as u32 + bg.running_requests + joining as u32,
            running_tokens: backlog + bg.pending_tokens + joining_tokens,
            waiting_requests: (self.waiting.len() - joining) as u32,
            waiting_tokens: self.waiting_tokens - joining_tokens,
            kv_cache_used_fraction: active_kv as f64 / self.model.kv_capacity_tokens as f64,
            t_p_measured: self.model.prefill.slope,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_idle(&self) -> bool {
        self.waiting.is_empty() && self.slots.is_empty()
    }

    /// Queue a delivered request. Returns the boundary at which an
    /// admission pass must run, if one is not already scheduled.
    pub fn enqueue(&mut self, req: u64, tokens: Arc<[Token]>, now: Micros) -> Option<Micros> {
        self.waiting_tokens += tokens.len() as u64;
        self.waiting.push_back(Queued { req, tokens, enqueued_at: now });
        self.want_tick(now)
    }

    fn want_tick(&mut self, now: Micros) -> Option<Micros> {
        if self.tick_pending.is_some() || self.waiting.is_empty() || self.free_slots() == 0 {
            return None;
        }
        let at = self.next_boundary(now);
        self.tick_pending = Some(at);
        Some(at)
    }

    /// Admission pass on an iteration boundary: FIFO into free slots.
    pub fn on_tick(&mut self, now: Micros) -> Vec<Admission> {
        self.tick_pending = None;
        let mut out = Vec::new();
        while self.free_slots() > 0 {
            let Some(q) = self.waiting.pop_front() else { break };
            let len = q.tokens.len() as u64;
            self.waiting_tokens -= len;
            let cached = if self.model.prefix_caching {
                self.cache.overlap_for_node(&q.tokens, &self.id) as u64
            } else {
                0
            };
            let residual = len - cached;
            let start = now.max(self.engine_free_at);
            let busy = ms_to_us(self.model.prefill.slope * residual as f64);
            self.engine_free_at = start + busy;
            let first_token_at = self.engine_free_at + ms_to_us(self.model.prefill.intercept);
            self.slots.insert(q.req, len);
            self.prefill_tokens += residual;
            self.prefilling.insert(q.req, InPrefill { tokens: q.tokens, residual });
            out.push(Admission { req: q.req, admitted_at: now, cached_tokens: cached, prefill_start: start, first_token_at });
        }
        out
    }

    /// Prefill finished: the prompt's KV blocks become reusable. Returns the
    /// token paths evicted from the cache to make room.
    pub fn on_prefill_done(&mut self, req: u64) -> Vec<Vec<Token>> {
        let Some(p) = self.prefilling.remove(&req) else { return Vec::new() };
        self.prefill_tokens -= p.residual;
        if !self.model.prefix_caching {
            return Vec::new();
        }
        self.clock += 1;
        self.cache.insert_with_evictions(&p.tokens, &self.id, self.clock)
    }

    /// Last token emitted; frees the slot. Returns the boundary for the next
    /// admission pass if requests are waiting.
    pub fn on_done(&mut self, req: u64, now: Micros) -> Option<Micros> {
        self.slots.remove(&req);
        self.want_tick(now)
    }

    pub fn last_token_at(&self, first_token_at: Micros, output_tokens: u64) -> Micros {
        first_token_at + output_tokens.saturating_sub(1) * self.tick_us
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Calibration;
    use crate::sim::config::BackgroundLoad;

    fn model(max_running: u32, caching: bool) -> BackendModel {
        BackendModel {
            max_running,
            prefill: Calibration::reference(),
            itl_ms: 12.5,
            kv_capacity_tokens: 1 << 20,
            prefix_caching: caching,
            background: BackgroundLoad::default(),
        }
    }

    fn prompt(n: u32, salt: u32) -> Arc<[Token]> {
        (0..n).map(|i| i * 7 + salt).collect()
    }

    #[test]
    fn idle_single_request() {
        let mut b = Backend::new(RegionId::new("a"), model(4, true), 16);
        assert_eq!(b.enqueue(1, prompt(500, 0), 0), Some(0));
        let adm = b.on_tick(0);
        assert_eq!(adm.len(), 1);
        assert_eq!(adm[0].first_token_at, 197_620);
    }

    #[test]
    fn admission_waits_for_boundary() {
        let mut b = Backend::new(RegionId::new("a"), model(4, true), 16);
        assert_eq!(b.enqueue(1, prompt(10, 0), 3_000), Some(12_500));
        assert_eq!(b.enqueue(2, prompt(10, 1), 4_000), None);
        assert_eq!(b.on_tick(12_500).len(), 2);
    }

    #[test]
    fn repeated_prompt_costs_intercept_only() {
        let mut b = Backend::new(RegionId::new("a"), model(4, true), 16);
        let p = prompt(500, 0);
        b.enqueue(1, p.clone(), 0);
        let first = b.on_tick(0)[0].clone();
        b.on_prefill_done(1);
        b.on_done(1, 1_000_000);
        b.enqueue(2, p, 1_000_000);
        let second = b.on_tick(1_000_000)[0].clone();
        assert_eq!(second.cached_tokens, 500);
        assert_eq!(second.first_token_at - second.prefill_start, 150_720);
        assert_eq!(first.first_token_at - first.prefill_start, 197_620);
    }

    #[test]
    fn full_batch_queues_fifo() {
        let mut b = Backend::new(RegionId::new("a"), model(1, false), 16);
        b.enqueue(1, prompt(10, 0), 0);
        b.on_tick(0);
        for r in 2..5 {
            assert_eq!(b.enqueue(r, prompt(10, r as u32), 0), None);
        }
        let st = b.state(0);
        assert_eq!((st.running_requests, st.waiting_requests, st.waiting_tokens), (1, 3, 30));
        let at = b.on_done(1, 100_000).unwrap();
        assert_eq!(b.on_tick(at)[0].req, 2);
        let at = b.on_done(2, 200_000).unwrap();
        assert_eq!(b.on_tick(at)[0].req, 3);
    }

    #[test]
    fn engine_serializes_prefill() {
        let mut b = Backend::new(RegionId::new("a"), model(4, false), 16);
        b.enqueue(1, prompt(1000, 0), 0);
        b.enqueue(2, prompt(1000, 1), 0);
        let adm = b.on_tick(0);
        assert_eq!(adm[1].prefill_start, 93_800);
        assert_eq!(adm[1].first_token_at, 93_800 * 2 + 150_720);
    }

    #[test]
    fn background_load_holds_slots_and_reports_tokens() {
        let mut m = model(10, true);
        m.background = BackgroundLoad { running_requests: 10, pending_tokens: 6500 };
        let mut b = Backend::new(RegionId::new("us-west"), m, 16);
        let st = b.state(0);
        assert_eq!((st.running_requests, st.pending_tokens()), (10, 6500));
        assert_eq!(b.enqueue(1, prompt(5, 0), 0), None);
        assert_eq!(b.state(0).waiting_tokens, 5);
    }
}
