//! Deterministic derivation of independent random streams from one master
//! seed. Every consumer (feature maps, per-node quantizers, data shuffles)
//! gets its own stream keyed by a purpose tag and indices, so the draws a
//! consumer sees never depend on scheduling or on how many draws others made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    FeatureMap = 1,
    Quantizer = 2,
    Shuffle = 3,
    Synthetic = 4,
    Probe = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(purpose as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, purpose, indices))
}
