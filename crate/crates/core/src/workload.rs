//! Request streams: arrival processes, synthetic shared-prefix prompts and
//! trace ingestion.
//!
//! Prompts are text. Tokens are derived from text by hashing consecutive
//! 4-byte windows into a 2^16 vocabulary ([`pseudo_tokenize`]), so two
//! prompts sharing a text prefix share a token prefix up to the last whole
//! window. Synthetic prompts are generated one 4-character word per token to
//! keep that alignment exact.

use crate::geo::{prompt_hash, GeoLookup, GeoPoint, ResolvedOrigin};
use crate::state::{Micros, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use std::hash::Hasher;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

pub const VOCAB_SIZE: u32 = 1 << 16;
const WINDOW: usize = 4;
const WORD_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz012345";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
}

/// Hash each 4-byte window of `text` to a token id.
pub fn pseudo_tokenize(text: &str) -> Vec<Token> {
    text.as_bytes()
        .chunks(WINDOW)
        .map(|w| {
            let mut h = fnv::FnvHasher::default();
            h.write(w);
            (h.finish() % u64::from(VOCAB_SIZE)) as Token
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    Constant { tokens: usize },
    LogNormal { median: f64, sigma: f64 },
    Uniform { min: usize, max: usize },
}

impl LengthDist {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match *self {
            LengthDist::Constant { tokens } => tokens,
            LengthDist::LogNormal { median, sigma } => {
                let d = LogNormal::new(median.ln(), sigma).expect("validated lognormal");
                d.sample(rng).round() as usize
            }
            LengthDist::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            LengthDist::Constant { tokens } => tokens as f64,
            LengthDist::LogNormal { median, sigma } => median * (sigma * sigma / 2.0).exp(),
            LengthDist::Uniform { min, max } => (min + max) as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            LengthDist::Constant { .. } => Ok(()),
            LengthDist::LogNormal { median, sigma } if median > 0.0 && sigma >= 0.0 && sigma.is_finite() => Ok(()),
            LengthDist::Uniform { min, max } if min <= max => Ok(()),
            other => Err(WorkloadError::Invalid(format!("bad length distribution {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: Arc<str>,
    pub tokens: Arc<[Token]>,
    pub hash: u64,
    /// Which shared prefix the prompt was built on, for synthetic prompts.
    pub prefix_id: Option<usize>,
}

impl Prompt {
    pub fn from_text(text: impl Into<Arc<str>>) -> Self {
        let text: Arc<str> = text.into();
        Prompt {
            tokens: pseudo_tokenize(&text).into(),
            hash: prompt_hash(&text),
            text,
            prefix_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharedPrefixSpec {
    pub num_prefixes: usize,
    pub prefix_len: LengthDist,
    pub suffix_len: LengthDist,
}

impl Default for SharedPrefixSpec {
    fn default() -> Self {
        SharedPrefixSpec {
            num_prefixes: 8,
            prefix_len: LengthDist::Constant { tokens: 256 },
            suffix_len: LengthDist::LogNormal { median: 512.0, sigma: 0.5 },
        }
    }
}

fn random_words<R: Rng>(rng: &mut R, n: usize, out: &mut String) {
    out.reserve(n * WINDOW);
    for _ in 0..n {
        for _ in 0..WINDOW {
            out.push(WORD_ALPHABET[rng.random_range(0..WORD_ALPHABET.len())] as char);
        }
    }
}

/// K shared system prompts, each request drawing one uniformly and appending
/// a fresh random suffix.
#[derive(Debug, Clone)]
pub struct PromptPool {
    spec: SharedPrefixSpec,
    prefixes: Vec<String>,
    rng: ChaCha8Rng,
}

impl PromptPool {
    pub fn new(spec: SharedPrefixSpec, seed: u64) -> Result<Self, WorkloadError> {
        if spec.num_prefixes == 0 {
            return Err(WorkloadError::Invalid("num_prefixes must be >= 1".into()));
        }
        spec.prefix_len.validate()?;
        spec.suffix_len.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prefixes = (0..spec.num_prefixes)
            .map(|_| {
                let mut s = String::new();
                let n = spec.prefix_len.sample(&mut rng);
                random_words(&mut rng, n, &mut s);
                s
            })
            .collect();
        Ok(PromptPool { spec, prefixes, rng })
    }

    pub fn next_prompt(&mut self) -> Prompt {
        let id = self.rng.random_range(0..self.prefixes.len());
        let mut text = self.prefixes[id].clone();
        let n = self.spec.suffix_len.sample(&mut self.rng);
        random_words(&mut self.rng, n, &mut text);
        Prompt { prefix_id: Some(id), ..Prompt::from_text(text) }
    }
}

/// `count` prompts from a fresh [`PromptPool`].
pub fn synth_shared_prefix(
    spec: SharedPrefixSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Prompt>, WorkloadError> {
    let mut pool = PromptPool::new(spec, seed)?;
    Ok((0..count).map(|_| pool.next_prompt()).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptRecord {
    prompt: String,
}

pub fn write_prompts_jsonl<W: Write>(mut w: W, prompts: &[Prompt]) -> Result<(), WorkloadError> {
    for p in prompts {
        serde_json::to_writer(&mut w, &PromptRecord { prompt: p.text.to_string() })
            .map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_prompts_jsonl<R: BufRead>(reader: R) -> Result<Vec<Prompt>, WorkloadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord = serde_json::from_str(&line)
            .map_err(|e| WorkloadError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(Prompt::from_text(rec.prompt));
    }
    Ok(out)
}

/// Lookup table mapping each prompt's hash to `origin_of(i)`.
pub fn build_lookup(prompts: &[Prompt], mut origin_of: impl FnMut(usize) -> GeoPoint) -> GeoLookup {
    let mut lookup = GeoLookup::new();
    for (i, p) in prompts.iter().enumerate() {
        lookup.insert(p.hash, origin_of(i));
    }
    lookup
}

/// Ingested trace: prompts with resolved origins.
#[derive(Debug, Clone, Default)]
pub struct TraceSource {
    pub entries: Vec<(Prompt, ResolvedOrigin)>,
    pub hash_misses: usize,
}

pub fn load_trace<P: BufRead, L: BufRead>(
    prompts_jsonl: P,
    geolookup_jsonl: L,
    fallback: GeoPoint,
) -> Result<TraceSource, WorkloadError> {
    let prompts = read_prompts_jsonl(prompts_jsonl)?;
    let lookup = GeoLookup::read_jsonl(geolookup_jsonl)?;
    let entries: Vec<_> = prompts
        .into_iter()
        .map(|p| {
            let origin = lookup.resolve_origin(p.hash, fallback);
            (p, origin)
        })
        .collect();
    let hash_misses = entries.iter().filter(|(_, o)| o.fallback).count();
    Ok(TraceSource { entries, hash_misses })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginCluster {
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
    /// Half-width of the uniform box around the center, in degrees.
    #[serde(default)]
    pub spread_deg: f64,
}

fn sample_origin<R: Rng>(clusters: &[OriginCluster], rng: &mut R) -> GeoPoint {
    let total: f64 = clusters.iter().map(|c| c.weight).sum();
    let mut x = rng.random::<f64>() * total;
    let mut pick = clusters.last().expect("validated non-empty");
    for c in clusters {
        if x < c.weight {
            pick = c;
            break;
        }
        x -= c.weight;
    }
    let mut jitter = |s: f64| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
    let (dlat, dlon) = (jitter(pick.spread_deg), jitter(pick.spread_deg));
    GeoPoint {
        lat: (pick.lat + dlat).clamp(-90.0, 90.0),
        lon: (pick.lon + dlon).clamp(-180.0, 180.0),
    }
}

/// Where prompts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSourceSpec {
    Synthetic {
        #[serde(default)]
        prefixes: SharedPrefixSpec,
        origins: Vec<OriginCluster>,
    },
    Trace {
        prompts: PathBuf,
        geolookup: PathBuf,
        fallback: GeoPoint,
    },
}

impl PromptSourceSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        match self {
            PromptSourceSpec::Synthetic { prefixes, origins } => {
                if origins.is_empty() || origins.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
                    return Err(WorkloadError::Invalid("need at least one weighted origin".into()));
                }
                if origins.iter().any(|c| c.weight < 0.0 || GeoPoint::new(c.lat, c.lon).is_err()) {
                    return Err(WorkloadError::Invalid("bad origin cluster".into()));
                }
                prefixes.prefix_len.validate()?;
                prefixes.suffix_len.validate()
            }
            PromptSourceSpec::Trace { .. } => Ok(()),
        }
    }
}

/// Hands out (prompt, origin) pairs. Traces are replayed in order and wrap.
// one per simulation; boxing buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum PromptSupplier {
    Synthetic { pool: PromptPool, origins: Vec<OriginCluster>, rng: ChaCha8Rng },
    Trace { trace: TraceSource, next: usize },
}

impl PromptSupplier {
    pub fn from_spec(spec: &PromptSourceSpec, seed: u64) -> Result<Self, WorkloadError> {
        spec.validate()?;
        match spec {
            PromptSourceSpec::Synthetic { prefixes, origins } => Ok(PromptSupplier::Synthetic {
                pool: PromptPool::new(*prefixes, seed ^ 0x5eed_0001)?,
                origins: origins.clone(),
                rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002),
            }),
            PromptSourceSpec::Trace { prompts, geolookup, fallback } => {
                let p = std::io::BufReader::new(std::fs::File::open(prompts)?);
                let l = std::io::BufReader::new(std::fs::File::open(geolookup)?);
                Ok(PromptSupplier::Trace { trace: load_trace(p, l, *fallback)?, next: 0 })
            }
        }
    }

    pub fn from_trace(trace: TraceSource) -> Self {
        PromptSupplier::Trace { trace, next: 0 }
    }

    pub fn next_item(&mut self) -> Option<(Prompt, ResolvedOrigin)> {
        match self {
            PromptSupplier::Synthetic { pool, origins, rng } => {
                let prompt = pool.next_prompt();
                let point = sample_origin(origins, rng);
                Some((prompt, ResolvedOrigin { point, fallback: false }))
            }
            PromptSupplier::Trace { trace, next } => {
                if trace.entries.is_empty() {
                    return None;
                }
                let item = trace.entries[*next % trace.entries.len()].clone();
                *next += 1;
                Some(item)
            }
        }
    }
}

/// Square-wave rate modulation: `factor`× the base rate for the first
/// `duty` fraction of every `period_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub factor: f64,
    pub period_s: f64,
    pub duty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalSpec {
    /// Closed loop: `n` requests in flight, each completion replaced.
    Concurrent { n: usize },
    Poisson {
        rate: f64,
        #[serde(default)]
        burst: Option<Burst>,
    },
    /// Evenly spaced arrivals at `ceiling` per second.
    Throughput { ceiling: f64 },
    /// Constant-rate Poisson stages `start + k * step`.
    Sweep {
        start: f64,
        step: f64,
        #[serde(default = "default_max_stages")]
        max_stages: usize,
        #[serde(default = "default_p99_multiple")]
        p99_multiple: f64,
    },
}

fn default_max_stages() -> usize {
    20
}

fn default_p99_multiple() -> f64 {
    5.0
}

impl ArrivalSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ok = match *self {
            ArrivalSpec::Concurrent { n } => n >= 1,
            ArrivalSpec::Poisson { rate, burst } => {
                rate > 0.0
                    && burst.is_none_or(|b| b.factor > 0.0 && b.period_s > 0.0 && (0.0..=1.0).contains(&b.duty))
            }
            ArrivalSpec::Throughput { ceiling } => ceiling > 0.0,
            ArrivalSpec::Sweep { start, step, max_stages, p99_multiple } => {
                start > 0.0 && step > 0.0 && max_stages >= 1 && p99_multiple > 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::Invalid(format!("{self:?}")))
        }
    }
}

fn to_us(seconds: f64) -> Micros {
    (seconds * 1e6).round() as Micros
}

/// Arrival instants of a (possibly burst-modulated) Poisson process on
/// `[0, duration_s)`.
pub fn gen_poisson(rate: f64, burst: Option<Burst>, duration_s: f64, seed: u64) -> Vec<Micros> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        let (r, boundary) = match burst {
            None => (rate, f64::INFINITY),
            Some(b) => {
                let k = (t / b.period_s).floor();
                let on_end = k * b.period_s + b.duty * b.period_s;
                if t < on_end {
                    (rate * b.factor, on_end)
                } else {
                    (rate, (k + 1.0) * b.period_s)
                }
            }
        };
        let gap: f64 = Exp::new(r).expect("positive rate").sample(&mut rng);
        // memoryless: restart the draw at a rate change
        if t + gap >= boundary {
            t = boundary;
            continue;
        }
        t += gap;
        if t >= duration_s {
            break;
        }
        out.push(to_us(t));
    }
    out
}

pub fn gen_throughput(ceiling: f64, duration_s: f64) -> Vec<Micros> {
    let n = (ceiling * duration_s).floor() as u64;
    (0..n).map(|k| to_us(k as f64 / ceiling)).collect()
}

/// Closed-loop generator state: keeps `n` requests outstanding until the
/// horizon.
#[derive(Debug, Clone)]
pub struct ConcurrentGen {
    pub n: usize,
    pub horizon: Micros,
}

impl ConcurrentGen {
    pub fn new(n: usize, duration_s: f64) -> Self {
        ConcurrentGen { n, horizon: to_us(duration_s) }
    }

    /// Arrival instants at t = 0.
    pub fn initial(&self) -> Vec<Micros> {
        vec![0; self.n]
    }

    /// Replacement arrival for a request that finished at `now`.
    pub fn on_completion(&self, now: Micros) -> Option<Micros> {
        (now < self.horizon).then_some(now)
    }
}

/// Rate of sweep stage `k` (0-based).
pub fn sweep_stage_rate(start: f64, step: f64, k: usize) -> f64 {
    start + k as f64 * step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStop {
    Continue,
    LatencyDegraded,
    Rejections,
    MaxStages,
}

/// Stop rule: any rejection, or a stage p99 above `p99_multiple` × the first
/// stage's.
pub fn sweep_verdict(
    stage: usize,
    max_stages: usize,
    baseline_p99: Option<f64>,
    stage_p99: Option<f64>,
    rejections: u64,
    p99_multiple: f64,
) -> SweepStop {
    if rejections > 0 {
        return SweepStop::Rejections;
    }
    if let (Some(base), Some(p99)) = (baseline_p99, stage_p99) {
        if p99 > p99_multiple * base {
            return SweepStop::LatencyDegraded;
        }
    }
    if stage + 1 >= max_stages {
        return SweepStop::MaxStages;
    }
    SweepStop::Continue
}

/// One row of the generated-stream debug dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub arrival_us: Micros,
    pub prompt_hash: u64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub token_count: usize,
}

pub fn write_arrivals_csv<W: Write>(w: W, rows: &[ArrivalRecord]) -> Result<(), WorkloadError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| WorkloadError::Invalid(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_spec(k: usize, prefix: usize, suffix: usize) -> SharedPrefixSpec {
        SharedPrefixSpec {
            num_prefixes: k,
            prefix_len: LengthDist::Constant { tokens: prefix },
            suffix_len: LengthDist::Constant { tokens: suffix },
        }
    }

    fn lcp(a: &[Token], b: &[Token]) -> usize {
        a.iter().zip(b).take_while(|(x, y)| x == y).count()
    }

    #[test]
    fn tokenizer_is_prefix_preserving() {
        let a = pseudo_tokenize("You are a helpful assistant. Hello");
        let b = pseudo_tokenize("You are a helpful assistant. Bye!");
        assert_eq!(a.len(), 9);
        assert!(lcp(&a, &b) >= 7);
        assert_eq!(pseudo_tokenize("abcd"), pseudo_tokenize("abcd"));
        assert!(pseudo_tokenize("").is_empty());
        assert!(a.iter().all(|&t| t < VOCAB_SIZE));
    }

    #[test]
    fn single_prefix_no_suffix_is_identical() {
        let ps = synth_shared_prefix(pool_spec(1, 32, 0), 20, 7).unwrap();
        assert!(ps.windows(2).all(|w| w[0].tokens == w[1].tokens));
        assert_eq!(ps[0].tokens.len(), 32);
    }

    #[test]
    fn zero_prefix_length_gives_no_shared_prefix() {
        let ps = synth_shared_prefix(pool_spec(4, 0, 64), 200, 1).unwrap();
        let mut long_overlaps = 0;
        for w in ps.windows(2) {
            if lcp(&w[0].tokens, &w[1].tokens) >= 2 {
                long_overlaps += 1;
            }
        }
        assert_eq!(long_overlaps, 0);
    }

    #[test]
    fn prefix_sharing_frequency() {
        let k = 10;
        let ps = synth_shared_prefix(pool_spec(k, 8, 4), 20_000, 99).unwrap();
        let same = ps.chunks(2).filter(|p| p[0].prefix_id == p[1].prefix_id).count();
        let freq = same as f64 / 10_000.0;
        assert!((freq - 0.1).abs() < 0.02, "{freq}");
        // shared prefix id means shared token prefix
        for p in ps.chunks(2).take(100) {
            let shared = lcp(&p[0].tokens, &p[1].tokens) >= 8;
            assert_eq!(shared, p[0].prefix_id == p[1].prefix_id);
        }
    }

    #[test]
    fn export_reingest_round_trip() {
        let ps = synth_shared_prefix(pool_spec(3, 16, 8), 50, 5).unwrap();
        let mut prompts = Vec::new();
        write_prompts_jsonl(&mut prompts, &ps).unwrap();
        let lookup = build_lookup(&ps, |i| GeoPoint { lat: i as f64 * 0.5, lon: -(i as f64) });
        let mut geo = Vec::new();
        lookup.write_jsonl(&mut geo).unwrap();

        let fallback = GeoPoint { lat: 0.0, lon: 0.0 };
        let trace = load_trace(prompts.as_slice(), geo.as_slice(), fallback).unwrap();
        assert_eq!(trace.hash_misses, 0);
        assert_eq!(trace.entries.len(), 50);
        for (i, ((p, origin), orig)) in trace.entries.iter().zip(&ps).enumerate() {
            assert_eq!(p.tokens, orig.tokens);
            assert_eq!(origin.point.lat, i as f64 * 0.5);
        }
    }

    #[test]
    fn trace_misses_and_errors() {
        let empty = load_trace("".as_bytes(), "".as_bytes(), GeoPoint { lat: 1.0, lon: 1.0 }).unwrap();
        assert!(empty.entries.is_empty());

        let t = load_trace("{\"prompt\":\"hi\"}\n".as_bytes(), "".as_bytes(), GeoPoint { lat: 1.0, lon: 2.0 })
            .unwrap();
        assert_eq!(t.hash_misses, 1);
        assert!(t.entries[0].1.fallback);

        let err = read_prompts_jsonl("{\"prompt\":\"a\"}\n{oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 2, .. }));
    }

    #[test]
    fn poisson_mean_and_determinism() {
        let a = gen_poisson(2.0, None, 10_000.0, 3);
        assert_eq!(a, gen_poisson(2.0, None, 10_000.0, 3));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        let mean_gap = *a.last().unwrap() as f64 / 1e6 / (a.len() - 1) as f64;
        assert!((mean_gap - 0.5).abs() < 0.01, "{mean_gap}");
    }

    #[test]
    fn poisson_ks_against_exponential() {
        let rate = 3.0;
        let arr = gen_poisson(rate, None, 10_000.0 / rate * 1.05, 11);
        let mut gaps: Vec<f64> = std::iter::once(arr[0])
            .chain(arr.windows(2).map(|w| w[1] - w[0]))
            .map(|g| g as f64 / 1e6)
            .take(10_000)
            .collect();
        assert_eq!(gaps.len(), 10_000);
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-rate * x).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn burst_raises_rate_in_on_phase() {
        let b = Burst { factor: 4.0, period_s: 10.0, duty: 0.5 };
        let arr = gen_poisson(5.0, Some(b), 1000.0, 2);
        let on = arr.iter().filter(|&&t| (t as f64 / 1e6) % 10.0 < 5.0).count() as f64;
        let off = arr.len() as f64 - on;
        assert!((on / off - 4.0).abs() < 0.4, "{}", on / off);
    }

    #[test]
    fn throughput_is_evenly_spaced() {
        let arr = gen_throughput(1000.0, 1.0);
        assert_eq!(arr.len(), 1000);
        assert!(arr.windows(2).all(|w| w[1] - w[0] == 1000));
    }

    #[test]
    fn concurrent_replacement() {
        let g = ConcurrentGen::new(10, 60.0);
        assert_eq!(g.initial().len(), 10);
        assert_eq!(g.on_completion(5), Some(5));
        assert_eq!(g.on_completion(60_000_000), None);
    }

    #[test]
    fn sweep_rules() {
        assert_eq!(sweep_stage_rate(2.0, 0.5, 3), 3.5);
        assert_eq!(sweep_verdict(0, 10, None, Some(1.0), 1, 5.0), SweepStop::Rejections);
        assert_eq!(sweep_verdict(3, 10, Some(1.0), Some(5.1), 0, 5.0), SweepStop::LatencyDegraded);
        assert_eq!(sweep_verdict(3, 10, Some(1.0), Some(4.9), 0, 5.0), SweepStop::Continue);
        assert_eq!(sweep_verdict(9, 10, Some(1.0), Some(1.0), 0, 5.0), SweepStop::MaxStages);
    }

    #[test]
    fn origins_follow_weights() {
        let clusters = [
            OriginCluster { lat: 10.0, lon: 10.0, weight: 3.0, spread_deg: 1.0 },
            OriginCluster { lat: -10.0, lon: -10.0, weight: 1.0, spread_deg: 0.0 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<_> = (0..4000).map(|_| sample_origin(&clusters, &mut rng)).collect();
        let first = pts.iter().filter(|p| p.lat > 0.0).count() as f64 / 4000.0;
        assert!((first - 0.75).abs() < 0.03);
        assert!(pts.iter().filter(|p| p.lat > 0.0).all(|p| (p.lat - 10.0).abs() <= 1.0));
    }

    #[test]
    fn arrivals_csv_header() {
        let mut buf = Vec::new();
        let row = ArrivalRecord { arrival_us: 5, prompt_hash: 9, origin_lat: 1.5, origin_lon: -2.0, token_count: 3 };
        write_arrivals_csv(&mut buf, &[row]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "arrival_us,prompt_hash,origin_lat,origin_lon,token_count\n5,9,1.5,-2.0,3\n"
        );
    }
}
