//! Deterministic discrete-event simulation of a multi-region deployment.
//!
//! Each region runs a load balancer (the policy handler plus a peer table and
//! a mirrored prefix index) in front of a mock backend. Load balancers learn
//! about peers only through periodic gossip, so routing decisions see
//! summaries as old as the one-way latency plus the refresh interval. The
//! `gorgo_proxy` strategy instead sends every request through one central
//! proxy with a current view of all backends.

pub mod backend;
pub mod config;
pub mod event;
pub mod network;
pub mod sweep;

use crate::geo::{nearest_region, GeoError, GeoPoint};
use crate::policy::{handle_request, route_central, DecisionKind, PolicyError, Request, Strategy};
use crate::prefix_index::{IndexConfig, PrefixIndex, DEFAULT_CAPACITY_BLOCKS};
use crate::state::{Micros, PeerSummary, PrefixDigest, RegionId, Token};
use crate::telemetry::{build_report, HopDecision, RegionReport, ReportMeta, RequestTrace, RunReport, TelemetryError};
use crate::workload::{gen_poisson, gen_throughput, ArrivalSpec, ConcurrentGen, PromptSupplier, WorkloadError};
use backend::Backend;
use config::{ConfigError, SimConfig};
use event::{Event, LogEntry, LogLine, Payload};
use network::{ms_to_us, JitterKey, NetworkModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;
use thiserror::Error;

/// Weight of the newest sample in the peer RTT moving average.
pub const RTT_EMA_ALPHA: f64 = 0.3;

const ARRIVAL_SALT: u64 = 0xa441_7a15;
const OUTPUT_SALT: u64 = 0x6f75_7470;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("trace: {0}")]
    Trace(#[from] TelemetryError),
    #[error("geo: {0}")]
    Geo(#[from] GeoError),
    #[error("sweep workloads run through sweep::run_sweep")]
    SweepNeedsDriver,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: RunReport,
    pub traces: Vec<RequestTrace>,
    pub event_log: Vec<String>,
    pub itl_gaps_ms: Vec<f64>,
}

impl SimOutput {
    pub fn event_log_jsonl(&self) -> String {
        let mut s = String::with_capacity(self.event_log.iter().map(|l| l.len() + 1).sum());
        for l in &self.event_log {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Updates an RTT estimate with a new sample; `None` seeds it.
pub fn rtt_ema(prev: Option<f64>, sample_ms: f64) -> f64 {
    match prev {
        None => sample_ms,
        Some(p) => RTT_EMA_ALPHA * sample_ms + (1.0 - RTT_EMA_ALPHA) * p,
    }
}

struct Live {
    tokens: Option<Arc<[Token]>>,
    origin: GeoPoint,
    request: Option<Request>,
    trace: RequestTrace,
    prefill_start: Micros,
}

struct Balancer {
    peers: BTreeMap<usize, PeerSummary>,
    measured: BTreeMap<usize, bool>,
    index: PrefixIndex,
    digest: VecDeque<Arc<[Token]>>,
    evicted: VecDeque<Arc<[Token]>>,
    round: u64,
}

struct Proxy {
    region: usize,
    index: PrefixIndex,
    inflight_tokens: Vec<u64>,
    inflight_reqs: Vec<u32>,
}

enum Arrivals {
    Open { times: Vec<Micros>, next: usize },
    Closed(ConcurrentGen),
}

struct Counters {
    forwarded_out: u64,
    rejected: u64,
    handled: u64,
    queue_depth: Vec<(Micros, u32)>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    ids: Vec<RegionId>,
    pos: BTreeMap<RegionId, usize>,
    coords: Vec<GeoPoint>,
    net: NetworkModel,
    backends: Vec<Backend>,
    balancers: Vec<Balancer>,
    proxy: Option<Proxy>,
    counters: Vec<Counters>,
    supplier: PromptSupplier,
    output_rng: ChaCha8Rng,
    arrivals: Arrivals,
    heap: BinaryHeap<Event>,
    seq: u64,
    next_req: u64,
    live: Vec<Live>,
    in_flight: u64,
    horizon: Micros,
    log: Vec<String>,
    itl_gaps_ms: Vec<f64>,
}

/// Runs one simulation. Sweep workloads go through [`sweep::run_sweep`].
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    if matches!(cfg.workload.arrival, ArrivalSpec::Sweep { .. }) {
        return Err(SimError::SweepNeedsDriver);
    }
    Sim::new(cfg)?.run()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let ids = cfg.region_ids();
        let pos = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let coords = cfg.regions.iter().map(|r| GeoPoint { lat: r.lat, lon: r.lon }).collect();
        let matrix = cfg.latency_matrix()?;
        let models = cfg.backend_models()?;
        let block = cfg.prefix_block_size;
        let backends: Vec<Backend> = ids
            .iter()
            .zip(models)
            .map(|(id, m)| Backend::new(id.clone(), m, block))
            .collect();
        let mirror = || PrefixIndex::new(IndexConfig { block_size: block, capacity_blocks: DEFAULT_CAPACITY_BLOCKS });

        // Peer tables start from a t = 0 snapshot at the configured latency.
        let balancers = (0..ids.len())
            .map(|i| Balancer {
                peers: (0..ids.len())
                    .filter(|&j| j != i)
                    .map(|j| (j, PeerSummary::new(backends[j].state(0), matrix[i][j], 0)))
                    .collect(),
                measured: BTreeMap::new(),
                index: mirror(),
                digest: VecDeque::new(),
                evicted: VecDeque::new(),
                round: 0,
            })
            .collect();

        let proxy = (cfg.policy.strategy == Strategy::GorgoProxy).then(|| Proxy {
            region: cfg.proxy_region.as_ref().map_or(0, |p| ids.iter().position(|i| i.as_str() == p).unwrap()),
            index: mirror(),
            inflight_tokens: vec![0; ids.len()],
            inflight_reqs: vec![0; ids.len()],
        });

        let arrivals = match cfg.workload.arrival {
            ArrivalSpec::Concurrent { n } => Arrivals::Closed(ConcurrentGen::new(n, cfg.duration_s)),
            ArrivalSpec::Poisson { rate, burst } => Arrivals::Open {
                times: gen_poisson(rate, burst, cfg.duration_s, cfg.seed ^ ARRIVAL_SALT),
                next: 0,
            },
            ArrivalSpec::Throughput { ceiling } => {
                Arrivals::Open { times: gen_throughput(ceiling, cfg.duration_s), next: 0 }
            }
            ArrivalSpec::Sweep { .. } => return Err(SimError::SweepNeedsDriver),
        };

        let counters = ids
            .iter()
            .map(|_| Counters { forwarded_out: 0, rejected: 0, handled: 0, queue_depth: Vec::new() })
            .collect();

        Ok(Sim {
            cfg,
            net: NetworkModel::new(matrix, cfg.network.jitter_fraction, cfg.seed),
            supplier: PromptSupplier::from_spec(&cfg.workload.source, cfg.seed)?,
            output_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ OUTPUT_SALT),
            horizon: ms_to_us(cfg.duration_s * 1000.0),
            ids,
            pos,
            coords,
            backends,
            balancers,
            proxy,
            counters,
            arrivals,
            heap: BinaryHeap::new(),
            seq: 0,
            next_req: 0,
            live: Vec::new(),
            in_flight: 0,
            log: Vec::new(),
            itl_gaps_ms: Vec::new(),
        })
    }

    fn push(&mut self, at: Micros, payload: Payload) {
        self.seq += 1;
        self.heap.push(Event { at, seq: self.seq, payload });
    }

    fn emit(&mut self, t_us: Micros, entry: LogEntry) {
        if self.cfg.telemetry.event_log {
            let line = serde_json::to_string(&LogLine { t_us, entry }).expect("log line serializes");
            self.log.push(line);
        }
    }

    fn schedule_arrival(&mut self, at: Micros) {
        let req = self.next_req;
        self.next_req += 1;
        self.push(at, Payload::Arrival { req });
    }

    fn schedule_next_open_arrival(&mut self) {
        if let Arrivals::Open { times, next } = &mut self.arrivals {
            if let Some(&t) = times.get(*next) {
                *next += 1;
                self.schedule_arrival(t);
            }
        }
    }

    fn gossip_continues(&self, t: Micros) -> bool {
        t < self.horizon || (self.cfg.drain && self.in_flight > 0)
    }

    fn run(mut self) -> Result<SimOutput, SimError> {
        match &self.arrivals {
            Arrivals::Open { .. } => self.schedule_next_open_arrival(),
            Arrivals::Closed(g) => {
                for t in g.initial() {
                    self.schedule_arrival(t);
                }
            }
        }
        for r in 0..self.ids.len() {
            self.push(0, Payload::GossipRefresh { region: r });
        }

        // Hard stop for drains that cannot finish.
        let drain_cap = self.horizon.saturating_mul(10).saturating_add(600_000_000);
        let mut in_flight_at_horizon = None;
        while let Some(ev) = self.heap.pop() {
            if ev.at > self.horizon && in_flight_at_horizon.is_none() {
                in_flight_at_horizon = Some(self.in_flight);
            }
            if ev.at > self.horizon && (!self.cfg.drain || ev.at > drain_cap) {
                break;
            }
            self.dispatch(ev)?;
        }
        let in_flight_at_horizon = in_flight_at_horizon.unwrap_or(self.in_flight);
        self.finish(in_flight_at_horizon)
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        let now = ev.at;
        match ev.payload {
            Payload::Arrival { req } => self.on_arrival(req, now),
            Payload::HopDelivery { req, from, to, proxied } => self.on_delivery(req, from, to, proxied, now),
            Payload::ProxyDelivery { req } => self.on_proxy(req, now),
            Payload::DecodeTick { region } => self.on_tick(region, now),
            Payload::PrefillDone { req, region } => self.on_prefill_done(req, region, now),
            Payload::RequestDone { req, region } => self.on_request_done(req, region, now),
            Payload::GossipRefresh { region } => {
                self.on_gossip_refresh(region, now);
                Ok(())
            }
            Payload::GossipDeliver { from, to, sent_at, state, digest } => {
                self.on_gossip_deliver(from, to, sent_at, *state, digest, now);
                Ok(())
            }
        }
    }

    fn on_arrival(&mut self, req: u64, now: Micros) -> Result<(), SimError> {
        self.schedule_next_open_arrival();
        let Some((prompt, origin)) = self.supplier.next_item() else { return Ok(()) };
        let output_tokens = self.cfg.workload.output_tokens.sample(&mut self.output_rng).max(1) as u64;
        let ingress = *self
            .pos
            .get(nearest_region(origin.point, self.ids.iter().zip(self.coords.iter().copied()))?)
            .expect("known region");
        let mut trace = RequestTrace::new(req, now, prompt.tokens.len() as u64, output_tokens);
        trace.fallback_origin = origin.fallback;
        debug_assert_eq!(self.live.len() as u64, req);
        self.live.push(Live {
            tokens: Some(prompt.tokens.clone()),
            origin: origin.point,
            request: None,
            trace,
            prefill_start: 0,
        });
        self.in_flight += 1;
        self.emit(
            now,
            LogEntry::Arrival {
                req,
                ingress: self.ids[ingress].clone(),
                prompt_tokens: prompt.tokens.len() as u64,
                output_tokens,
                origin_lat: origin.point.lat,
                origin_lon: origin.point.lon,
                fallback_origin: origin.fallback,
            },
        );
        let key = JitterKey::Hop { request: req, hop: 0 };
        match &self.proxy {
            Some(p) => {
                let at = now + self.net.transit_us(ingress, p.region, key);
                self.push(at, Payload::ProxyDelivery { req });
            }
            None => {
                let at = now + self.net.transit_us(ingress, ingress, key);
                self.push(at, Payload::HopDelivery { req, from: ingress, to: ingress, proxied: false });
            }
        }
        Ok(())
    }

    fn tokens_of(&self, req: u64) -> Arc<[Token]> {
        self.live[req as usize].tokens.clone().expect("tokens kept until terminal")
    }

    fn enqueue_local(&mut self, req: u64, region: usize, now: Micros) {
        let tokens = self.tokens_of(req);
        if let Some(at) = self.backends[region].enqueue(req, tokens, now) {
            self.push(at, Payload::DecodeTick { region });
        }
    }

    fn on_delivery(&mut self, req: u64, from: usize, to: usize, proxied: bool, now: Micros) -> Result<(), SimError> {
        let to_id = self.ids[to].clone();
        let tokens = self.tokens_of(req);
        let live = &mut self.live[req as usize];
        live.trace.record_hop(to_id.clone(), now)?;
        let hop = live.trace.hop_count();
        match &mut live.request {
            None => {
                let mut r = Request::new(req, tokens.clone(), live.origin, to_id.clone(), now);
                r.created_at = live.trace.created_us;
                live.request = Some(r);
            }
            Some(r) => r.record_hop(to_id.clone(), now)?,
        }
        self.emit(now, LogEntry::HopDelivery { req, from: self.ids[from].clone(), to: to_id.clone(), hop });

        if proxied {
            let p = self.proxy.as_mut().expect("proxied delivery needs a proxy");
            p.inflight_tokens[to] -= tokens.len() as u64;
            p.inflight_reqs[to] -= 1;
            self.enqueue_local(req, to, now);
            return Ok(());
        }

        let state = self.backends[to].state(now);
        let bal = &self.balancers[to];
        let peers: Vec<PeerSummary> = bal.peers.values().cloned().collect();
        let request = self.live[req as usize].request.as_ref().expect("set above");
        let decision = handle_request(request, &state, &peers, &bal.index, &self.cfg.policy, now)?;
        self.live[req as usize].trace.decisions.push(HopDecision {
            region: to_id.clone(),
            at_us: now,
            kind: decision.kind.clone(),
            chosen_cost: decision.chosen_cost,
            candidates: decision.breakdown.clone(),
        });
        self.emit(
            now,
            LogEntry::Decision {
                req,
                region: to_id.clone(),
                decision: decision.kind.clone(),
                chosen_cost_ms: decision.chosen_cost,
                candidates: decision.breakdown,
            },
        );

        match decision.kind {
            DecisionKind::ServeLocal | DecisionKind::QueueLocal => {
                self.balancers[to].index.insert(&tokens, &to_id, now);
                self.enqueue_local(req, to, now);
            }
            DecisionKind::Forward(peer) => {
                let pi = self.pos[&peer];
                self.live[req as usize].trace.record_egress(now)?;
                self.counters[to].forwarded_out += 1;
                let bal = &mut self.balancers[to];
                if let Some(s) = bal.peers.get_mut(&pi) {
                    // counted until the peer's next summary replaces it
                    s.state.waiting_tokens += tokens.len() as u64;
                    s.state.waiting_requests += 1;
                }
                bal.index.insert(&tokens, &peer, now);
                let transit = self.net.transit_us(to, pi, JitterKey::Hop { request: req, hop: hop + 1 }).max(1);
                self.push(now + transit, Payload::HopDelivery { req, from: to, to: pi, proxied: false });
            }
            DecisionKind::Reject(cause) => {
                self.live[req as usize].trace.reject(cause)?;
                self.counters[to].rejected += 1;
                self.emit(now, LogEntry::Rejected { req, region: to_id, cause });
                self.on_terminal(req, now);
            }
        }
        Ok(())
    }

    fn on_proxy(&mut self, req: u64, now: Micros) -> Result<(), SimError> {
        let tokens = self.tokens_of(req);
        let p = self.proxy.as_ref().expect("proxy strategy");
        let states: Vec<_> = self
            .backends
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut s = b.state(now);
                s.waiting_tokens += p.inflight_tokens[i];
                s.waiting_requests += p.inflight_reqs[i];
                s
            })
            .collect();
        let rtt: BTreeMap<RegionId, f64> =
            self.ids.iter().enumerate().map(|(i, id)| (id.clone(), self.net.base_ms(p.region, i))).collect();
        match route_central(&tokens, &states, &p.index, &rtt, &self.cfg.policy) {
            Ok((target, table)) => {
                let proxy_region = p.region;
                let ti = self.pos[&target];
                let chosen = table.iter().find(|c| c.region == target).map(|c| c.breakdown.total_ms);
                let kind = DecisionKind::Forward(target.clone());
                self.live[req as usize].trace.decisions.push(HopDecision {
                    region: self.ids[proxy_region].clone(),
                    at_us: now,
                    kind: kind.clone(),
                    chosen_cost: chosen,
                    candidates: table.clone(),
                });
                self.emit(
                    now,
                    LogEntry::Decision {
                        req,
                        region: self.ids[proxy_region].clone(),
                        decision: kind,
                        chosen_cost_ms: chosen,
                        candidates: table,
                    },
                );
                let p = self.proxy.as_mut().expect("proxy strategy");
                p.index.insert(&tokens, &target, now);
                p.inflight_tokens[ti] += tokens.len() as u64;
                p.inflight_reqs[ti] += 1;
                if ti != proxy_region {
                    self.counters[proxy_region].forwarded_out += 1;
                }
                let at = now + self.net.transit_us(proxy_region, ti, JitterKey::Hop { request: req, hop: 1 });
                self.push(at, Payload::HopDelivery { req, from: proxy_region, to: ti, proxied: true });
            }
            Err(PolicyError::AllSaturated) => {
                let at = now + ms_to_us(self.cfg.proxy_retry_ms);
                self.emit(now, LogEntry::ProxyHold { req, retry_at_us: at });
                self.push(at, Payload::ProxyDelivery { req });
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn on_tick(&mut self, region: usize, now: Micros) -> Result<(), SimError> {
        for a in self.backends[region].on_tick(now) {
            let live = &mut self.live[a.req as usize];
            live.trace.record_admission(a.admitted_at)?;
            live.trace.cached_tokens = a.cached_tokens;
            live.prefill_start = a.prefill_start;
            self.counters[region].handled += 1;
            self.emit(
                now,
                LogEntry::AdmitToBatch {
                    req: a.req,
                    region: self.ids[region].clone(),
                    cached_tokens: a.cached_tokens,
                    prefill_start_us: a.prefill_start,
                },
            );
            self.push(a.first_token_at, Payload::PrefillDone { req: a.req, region });
        }
        Ok(())
    }

    fn on_prefill_done(&mut self, req: u64, region: usize, now: Micros) -> Result<(), SimError> {
        let evicted = self.backends[region].on_prefill_done(req);
        let id = self.ids[region].clone();
        let cap = self.cfg.digest_cap;
        let tokens = self.tokens_of(req);
        let bal = &mut self.balancers[region];
        for path in &evicted {
            bal.index.remove_holder(path, &id);
            push_capped(&mut bal.evicted, path.as_slice().into(), cap);
        }
        if self.backends[region].model.prefix_caching {
            push_capped(&mut bal.digest, tokens, cap);
        }
        let live = &mut self.live[req as usize];
        live.trace.record_first_token(live.prefill_start, now)?;
        let ttft = live.trace.ttft_us().expect("just recorded");
        let out = live.trace.output_tokens;
        let b = &self.backends[region];
        let gap_ms = b.tick_us() as f64 / 1000.0;
        self.itl_gaps_ms.extend(std::iter::repeat_n(gap_ms, out.saturating_sub(1) as usize));
        let done_at = b.last_token_at(now, out);
        self.emit(now, LogEntry::PrefillDone { req, region: id, ttft_us: ttft, evicted_blocks: evicted.len() });
        self.push(done_at, Payload::RequestDone { req, region });
        Ok(())
    }

    fn on_request_done(&mut self, req: u64, region: usize, now: Micros) -> Result<(), SimError> {
        self.live[req as usize].trace.finalize(now)?;
        if let Some(at) = self.backends[region].on_done(req, now) {
            self.push(at, Payload::DecodeTick { region });
        }
        self.emit(now, LogEntry::RequestDone { req, region: self.ids[region].clone() });
        self.on_terminal(req, now);
        Ok(())
    }

    fn on_terminal(&mut self, req: u64, now: Micros) {
        self.in_flight -= 1;
        let live = &mut self.live[req as usize];
        live.tokens = None;
        live.request = None;
        if let Arrivals::Closed(g) = &self.arrivals {
            if let Some(at) = g.on_completion(now) {
                self.schedule_arrival(at);
            }
        }
    }

    fn on_gossip_refresh(&mut self, region: usize, now: Micros) {
        let state = self.backends[region].state(now);
        self.counters[region].queue_depth.push((now, state.waiting_requests));
        let bal = &mut self.balancers[region];
        let digest = PrefixDigest {
            prefixes: bal.digest.drain(..).collect(),
            evicted: bal.evicted.drain(..).collect(),
        };
        let round = bal.round;
        bal.round += 1;
        self.emit(
            now,
            LogEntry::GossipRefresh {
                region: self.ids[region].clone(),
                running_requests: state.running_requests,
                waiting_requests: state.waiting_requests,
                pending_tokens: state.pending_tokens(),
                digest_prefixes: digest.prefixes.len(),
            },
        );
        for to in 0..self.ids.len() {
            if to == region {
                continue;
            }
            let at = now + self.net.transit_us(region, to, JitterKey::Gossip { round, from: region, to });
            self.push(
                at,
                Payload::GossipDeliver {
                    from: region,
                    to,
                    sent_at: now,
                    state: Box::new(state.clone()),
                    digest: digest.clone(),
                },
            );
        }
        let next = now + ms_to_us(self.cfg.policy.staleness.refresh_interval_ms).max(1);
        if self.gossip_continues(next) {
            self.push(next, Payload::GossipRefresh { region });
        }
    }

    fn on_gossip_deliver(
        &mut self,
        from: usize,
        to: usize,
        sent_at: Micros,
        state: crate::state::RegionState,
        digest: PrefixDigest,
        now: Micros,
    ) {
        let bal = &mut self.balancers[to];
        let sample = (now - sent_at) as f64 / 1000.0;
        let seeded = bal.measured.insert(from, true).unwrap_or(false);
        let entry = bal.peers.get_mut(&from).expect("peer table covers all regions");
        entry.rtt_ms = rtt_ema(seeded.then_some(entry.rtt_ms), sample);
        if sent_at >= entry.as_of {
            entry.state = state;
            entry.as_of = sent_at;
        }
        let from_id = self.ids[from].clone();
        for p in &digest.prefixes {
            bal.index.insert(p, &from_id, now);
        }
        for e in &digest.evicted {
            bal.index.remove_holder(e, &from_id);
        }
        let rtt_ms = entry_rtt(bal, from);
        self.emit(now, LogEntry::GossipDeliver { from: from_id, to: self.ids[to].clone(), sent_us: sent_at, rtt_ms });
    }

    fn finish(self, in_flight_at_horizon: u64) -> Result<SimOutput, SimError> {
        let regions = self
            .ids
            .iter()
            .zip(self.counters)
            .map(|(id, c)| RegionReport {
                region: id.clone(),
                requests_handled: c.handled,
                forwarded_out: c.forwarded_out,
                rejected: c.rejected,
                queue_depth: c.queue_depth,
            })
            .collect();
        let traces: Vec<RequestTrace> = self.live.into_iter().map(|l| l.trace).collect();
        let meta = ReportMeta {
            strategy: self.cfg.policy.strategy.as_str().to_string(),
            config_digest: self.cfg.digest(),
            seed: self.cfg.seed,
            duration_s: self.cfg.duration_s,
            in_flight_at_horizon,
            in_flight_at_end: self.in_flight,
            regions,
        };
        let report = build_report(&traces, &self.itl_gaps_ms, meta);
        Ok(SimOutput { report, traces, event_log: self.log, itl_gaps_ms: self.itl_gaps_ms })
    }
}

fn entry_rtt(bal: &Balancer, from: usize) -> f64 {
    bal.peers[&from].rtt_ms
}

fn push_capped(q: &mut VecDeque<Arc<[Token]>>, item: Arc<[Token]>, cap: usize) {
    if cap == 0 {
        return;
    }
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(item);
}

#[cfg(test)]
mod tests;
