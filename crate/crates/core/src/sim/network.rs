//! Latency matrix with seeded multiplicative jitter.

use crate::state::Micros;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Jitter stream domains, so request hops and gossip never share draws.
#[derive(Debug, Clone, Copy)]
pub enum JitterKey {
    Hop { request: u64, hop: u32 },
    Gossip { round: u64, from: usize, to: usize },
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    matrix: Vec<Vec<f64>>,
    jitter_fraction: f64,
    seed: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1000.0).round().max(0.0) as Micros
}

impl NetworkModel {
    pub fn new(matrix: Vec<Vec<f64>>, jitter_fraction: f64, seed: u64) -> Self {
        NetworkModel { matrix, jitter_fraction, seed }
    }

    pub fn base_ms(&self, from: usize, to: usize) -> f64 {
        self.matrix[from][to]
    }

    fn jitter(&self, key: JitterKey) -> f64 {
        if self.jitter_fraction == 0.0 {
            return 1.0;
        }
        let mixed = match key {
            JitterKey::Hop { request, hop } => splitmix(self.seed ^ splitmix(request) ^ splitmix(u64::from(hop) << 40)),
            JitterKey::Gossip { round, from, to } => splitmix(
                !self.seed ^ splitmix(round) ^ splitmix(((from as u64) << 32) | to as u64),
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        1.0 + rng.random_range(-self.jitter_fraction..=self.jitter_fraction)
    }

    /// One-way transit time for the given draw.
    pub fn transit_us(&self, from: usize, to: usize, key: JitterKey) -> Micros {
        ms_to_us(self.base_ms(from, to) * self.jitter(key))
    }
}
