//! Geo-proximal ingress: prompt hash → origin coordinates → nearest region.

use crate::state::RegionId;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hasher;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("no regions configured")]
    NoRegions,
    #[error("invalid coordinates ({lat}, {lon})")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::OutOfRange { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Region closest to `origin`; equal distances go to the smaller id.
pub fn nearest_region<'a>(
    origin: GeoPoint,
    regions: impl IntoIterator<Item = (&'a RegionId, GeoPoint)>,
) -> Result<&'a RegionId, GeoError> {
    regions
        .into_iter()
        .map(|(id, p)| (haversine_km(origin, p), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id)
        .ok_or(GeoError::NoRegions)
}

/// 64-bit FNV-1a over the prompt's UTF-8 bytes.
pub fn prompt_hash(prompt: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(prompt.as_bytes());
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedOrigin {
    pub point: GeoPoint,
    pub fallback: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct LookupRecord {
    hash: u64,
    lat: f64,
    lon: f64,
}

/// Prompt-hash → origin table.
#[derive(Debug, Clone, Default)]
pub struct GeoLookup {
    map: HashMap<u64, GeoPoint>,
}

impl GeoLookup {
    pub fn new() -> Self {
        GeoLookup::default()
    }

    pub fn insert(&mut self, hash: u64, point: GeoPoint) {
        self.map.insert(hash, point);
    }

    pub fn get(&self, hash: u64) -> Option<GeoPoint> {
        self.map.get(&hash).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn resolve_origin(&self, prompt_hash: u64, fallback: GeoPoint) -> ResolvedOrigin {
        match self.get(prompt_hash) {
            Some(point) => ResolvedOrigin { point, fallback: false },
            None => ResolvedOrigin { point: fallback, fallback: true },
        }
    }

    /// Parses `{"hash": u64, "lat": f64, "lon": f64}` lines. Blank lines are
    /// skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, GeoError> {
        let mut lookup = GeoLookup::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LookupRecord = serde_json::from_str(&line)
                .map_err(|e| GeoError::Parse { line: i + 1, msg: e.to_string() })?;
            let point = GeoPoint::new(rec.lat, rec.lon)
                .map_err(|e| GeoError::Parse { line: i + 1, msg: e.to_string() })?;
            lookup.insert(rec.hash, point);
        }
        Ok(lookup)
    }

    /// Writes records sorted by hash.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), GeoError> {
        let mut keys: Vec<_> = self.map.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let p = self.map[&k];
            let rec = LookupRecord { hash: k, lat: p.lat, lon: p.lon };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
