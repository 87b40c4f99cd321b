//! Seed derivation for independent random streams.
//!
//! Every source of randomness in a run draws from its own ChaCha8 stream.
//! A stream seed is `splitmix64(master ^ fnv1a(label) ^ splitmix64(index))`,
//! so changing one concern's stream (say exploration) never perturbs another
//! (say demand).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels of the per-concern streams used by the harness.
pub mod labels {
    pub const DEMAND: &str = "demand";
    pub const ROUTING: &str = "routing";
    pub const DRIVER: &str = "driver";
    pub const INIT: &str = "init";
    pub const DROPOUT: &str = "dropout";
    pub const EXPLORE: &str = "explore";
    pub const REPLAY: &str = "replay";
    pub const BASELINE: &str = "baseline";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed for stream `(label, index)` under `master`.
pub fn stream_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a(label.as_bytes()) ^ splitmix64(index))
}

/// Master seed plus the derivation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub master: u64,
    /// Optional override for the exploration streams; lets exploration be
    /// perturbed alone.
    pub explore_override: Option<u64>,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master, explore_override: None }
    }

    pub fn stream(&self, label: &str, index: u64) -> StreamRng {
        let master = match (label, self.explore_override) {
            (labels::EXPLORE, Some(m)) => m,
            _ => self.master,
        };
        StreamRng::seed_from_u64(stream_seed(master, label, index))
    }
}
