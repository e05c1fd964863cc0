//! Simulation config: one TOML document describing regions, backends,
//! network, routing policy and workload.

// `!(x > 0.0)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use crate::cost::Calibration;
use crate::geo::GeoPoint;
use crate::policy::PolicyConfig;
use crate::prefix_index::DEFAULT_BLOCK_SIZE;
use crate::state::RegionId;
use crate::workload::{ArrivalSpec, LengthDist, PromptSourceSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn field(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), msg: msg.into() }
}

/// Prefill timing: inline coefficients or a calibration JSON file as written
/// by `georoute calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrefillSpec {
    File { calibration_file: PathBuf },
    Inline { intercept: f64, slope: f64 },
}

/// Load pinned on a backend for the whole run: occupies batch slots and is
/// reported as outstanding prefill work, but is never served.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundLoad {
    #[serde(default)]
    pub running_requests: u32,
    #[serde(default)]
    pub pending_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub max_running: u32,
    pub prefill: PrefillSpec,
    pub itl_ms: f64,
    pub kv_capacity_tokens: u64,
    #[serde(default = "yes")]
    pub prefix_caching: bool,
    #[serde(default)]
    pub background: BackgroundLoad,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub backend: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// One-way latency of every unordered region pair.
    #[serde(default)]
    pub links: Vec<Link>,
    /// Latency between a region's clients and its own load balancer.
    #[serde(default)]
    pub intra_ms: f64,
    #[serde(default)]
    pub jitter_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub arrival: ArrivalSpec,
    pub source: PromptSourceSpec,
    #[serde(default = "default_output")]
    pub output_tokens: LengthDist,
}

fn default_output() -> LengthDist {
    LengthDist::Constant { tokens: 32 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryConfig {
    #[serde(default = "yes")]
    pub event_log: bool,
    #[serde(default)]
    pub std_dev: crate::telemetry::StdDevKind,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig { event_log: true, std_dev: Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Keep simulating after the horizon until every request is terminal.
    #[serde(default = "yes")]
    pub drain: bool,
    #[serde(default = "default_block")]
    pub prefix_block_size: usize,
    /// Prefixes per gossip digest.
    #[serde(default = "default_digest_cap")]
    pub digest_cap: usize,
    /// Where the central proxy runs, for the `gorgo_proxy` strategy.
    /// Defaults to the first region.
    #[serde(default)]
    pub proxy_region: Option<String>,
    #[serde(default = "default_retry_ms")]
    pub proxy_retry_ms: f64,
    pub regions: Vec<RegionConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
}

fn default_block() -> usize {
    DEFAULT_BLOCK_SIZE
}

fn default_digest_cap() -> usize {
    256
}

fn default_retry_ms() -> f64 {
    10.0
}

/// Backend parameters after resolving the prefill source.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendModel {
    pub max_running: u32,
    pub prefill: Calibration,
    pub itl_ms: f64,
    pub kv_capacity_tokens: u64,
    pub prefix_caching: bool,
    pub background: BackgroundLoad,
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses and makes relative paths relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut self.regions {
            if let PrefillSpec::File { calibration_file } = &mut r.backend.prefill {
                fix(calibration_file);
            }
        }
        if let PromptSourceSpec::Trace { prompts, geolookup, .. } = &mut self.workload.source {
            fix(prompts);
            fix(geolookup);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn region_ids(&self) -> Vec<RegionId> {
        self.regions.iter().map(|r| RegionId::new(&r.id)).collect()
    }

    /// Field-level validation. Runs before any simulation event.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("unsupported {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(field("duration_s", "must be > 0"));
        }
        if self.prefix_block_size == 0 {
            return Err(field("prefix_block_size", "must be >= 1"));
        }
        if !(self.proxy_retry_ms > 0.0) {
            return Err(field("proxy_retry_ms", "must be > 0"));
        }
        if self.regions.is_empty() {
            return Err(field("regions", "at least one region required"));
        }
        let mut seen = BTreeMap::new();
        for (i, r) in self.regions.iter().enumerate() {
            let f = |name: &str| format!("regions[{i}].{name}");
            if r.id.is_empty() {
                return Err(field(f("id"), "empty"));
            }
            if seen.insert(r.id.clone(), i).is_some() {
                return Err(field(f("id"), format!("duplicate region {}", r.id)));
            }
            GeoPoint::new(r.lat, r.lon).map_err(|e| field(f("lat/lon"), e.to_string()))?;
            let b = &r.backend;
            if b.max_running == 0 {
                return Err(field(f("backend.max_running"), "must be >= 1"));
            }
            if !(b.itl_ms > 0.0) {
                return Err(field(f("backend.itl_ms"), "must be > 0"));
            }
            if b.kv_capacity_tokens == 0 {
                return Err(field(f("backend.kv_capacity_tokens"), "must be > 0"));
            }
            if b.background.running_requests >= b.max_running {
                return Err(field(f("backend.background.running_requests"), "must leave at least one free slot"));
            }
            if let PrefillSpec::Inline { intercept, slope } = b.prefill {
                if !(slope > 0.0) || !(intercept >= 0.0) {
                    return Err(field(f("backend.prefill"), "need slope > 0 and intercept >= 0"));
                }
            }
        }
        if let Some(p) = &self.proxy_region {
            if !seen.contains_key(p) {
                return Err(field("proxy_region", format!("unknown region {p}")));
            }
        }
        self.latency_matrix()?;
        if !(0.0..1.0).contains(&self.network.jitter_fraction) {
            return Err(field("network.jitter_fraction", "must be in [0, 1)"));
        }
        self.policy.validate().map_err(|e| field("policy", e.to_string()))?;
        self.workload.arrival.validate().map_err(|e| field("workload.arrival", e.to_string()))?;
        self.workload.source.validate().map_err(|e| field("workload.source", e.to_string()))?;
        self.workload
            .output_tokens
            .validate()
            .map_err(|e| field("workload.output_tokens", e.to_string()))?;
        Ok(())
    }

    /// Symmetric one-way latency matrix in region order.
    pub fn latency_matrix(&self) -> Result<Vec<Vec<f64>>, ConfigError> {
        let n = self.regions.len();
        let pos: BTreeMap<&str, usize> = self.regions.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        if !(self.network.intra_ms >= 0.0) {
            return Err(field("network.intra_ms", "must be >= 0"));
        }
        let mut m = vec![vec![f64::NAN; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = self.network.intra_ms;
        }
        for (k, l) in self.network.links.iter().enumerate() {
            let f = format!("network.links[{k}]");
            let (Some(&a), Some(&b)) = (pos.get(l.a.as_str()), pos.get(l.b.as_str())) else {
                return Err(field(f, format!("unknown region in {}-{}", l.a, l.b)));
            };
            if a == b {
                return Err(field(f, "self link; use network.intra_ms"));
            }
            if !(l.ms >= 0.0 && l.ms.is_finite()) {
                return Err(field(f, "latency must be >= 0"));
            }
            if !m[a][b].is_nan() {
                return Err(field(f, format!("duplicate link {}-{}", l.a, l.b)));
            }
            m[a][b] = l.ms;
            m[b][a] = l.ms;
        }
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if v.is_nan() {
                    return Err(field(
                        "network.links",
                        format!("missing link {}-{}", self.regions[i].id, self.regions[j].id),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn backend_models(&self) -> Result<Vec<BackendModel>, ConfigError> {
        self.regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let prefill = match &r.backend.prefill {
                    PrefillSpec::Inline { intercept, slope } => Calibration {
                        intercept: *intercept,
                        slope: *slope,
                        r_squared: 1.0,
                        n: 0,
                    },
                    PrefillSpec::File { calibration_file } => {
                        let text = std::fs::read_to_string(calibration_file)
                            .map_err(|source| ConfigError::Io { path: calibration_file.clone(), source })?;
                        let cal: Calibration = serde_json::from_str(&text)
                            .map_err(|e| field(format!("regions[{i}].backend.prefill"), e.to_string()))?;
                        if !(cal.slope > 0.0) || !(cal.intercept >= 0.0) {
                            return Err(field(
                                format!("regions[{i}].backend.prefill"),
                                "calibration needs slope > 0 and intercept >= 0",
                            ));
                        }
                        cal
                    }
                };
                Ok(BackendModel {
                    max_running: r.backend.max_running,
                    prefill,
                    itl_ms: r.backend.itl_ms,
                    kv_capacity_tokens: r.backend.kv_capacity_tokens,
                    prefix_caching: r.backend.prefix_caching,
                    background: r.backend.background,
                })
            })
            .collect()
    }

    /// FNV-1a of the canonical JSON form with the strategy blanked, so runs
    /// that differ only in strategy share a digest.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(p) = v.get_mut("policy").and_then(|p| p.as_object_mut()) {
            p.remove("strategy");
        }
        // serde_json maps are ordered by key, so this is canonical
        let canon = serde_json::to_string(&v).expect("json");
        let mut h = fnv::FnvHasher::default();
        h.write(canon.as_bytes());
        format!("{:016x}", h.finish())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::policy::Strategy;

    pub(crate) const MINIMAL: &str = r#"
schema_version = 1
duration_s = 1.0

[[regions]]
id = "a"
lat = 0.0
lon = 0.0
[regions.backend]
max_running = 4
itl_ms = 10.0
kv_capacity_tokens = 100000
prefill = { intercept = 150.72, slope = 0.0938 }

[workload]
arrival = { kind = "throughput", ceiling = 1.0 }
source = { kind = "synthetic", origins = [{ lat = 0.0, lon = 0.0, weight = 1.0 }] }
"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.drain);
        assert_eq!(cfg.policy.strategy, Strategy::Gorgo);
        assert_eq!(cfg.latency_matrix().unwrap(), vec![vec![0.0]]);
        let models = cfg.backend_models().unwrap();
        assert_eq!(models[0].prefill.intercept, 150.72);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let bad = MINIMAL.replace("duration_s = 1.0", "duration_s = 1.0\nbogus = 3");
        assert!(matches!(SimConfig::from_toml_str(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn field_level_errors() {
        let mut cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        cfg.regions[0].backend.itl_ms = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.starts_with("regions[0].backend.itl_ms"), "{msg}");

        let mut cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = cfg.regions[0].clone();
        b.id = "b".into();
        cfg.regions.push(b);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("missing link a-b"), "{msg}");

        cfg.network.links.push(Link { a: "a".into(), b: "b".into(), ms: 5.0 });
        cfg.validate().unwrap();
        assert_eq!(cfg.latency_matrix().unwrap()[1][0], 5.0);

        cfg.duration_s = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("duration_s"));
    }

    #[test]
    fn digest_ignores_strategy_only() {
        let cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        let mut other = cfg.clone();
        other.policy.strategy = Strategy::LeastLoad;
        assert_eq!(cfg.digest(), other.digest());
        other.seed = 9;
        assert_ne!(cfg.digest(), other.digest());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn calibration_file_is_resolved_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let cal = Calibration::reference();
        std::fs::write(dir.path().join("cal.json"), serde_json::to_string(&cal).unwrap()).unwrap();
        let text = MINIMAL.replace(
            "prefill = { intercept = 150.72, slope = 0.0938 }",
            "prefill = { calibration_file = \"cal.json\" }",
        );
        let path = dir.path().join("sim.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = SimConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.backend_models().unwrap()[0].prefill, cal);
    }
}
