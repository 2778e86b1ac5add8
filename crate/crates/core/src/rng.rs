//! Keyed random streams.
//!
//! Every random draw in a Monte Carlo batch comes from a ChaCha stream whose
//! seed is a hash of `(seed, run, scan, purpose)`. Adding a tracker to a batch
//! therefore never shifts the measurement draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Measurements = 1,
    Tracker = 4,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn key(parts: &[u64]) -> [u8; 32] {
    let mut seed = [0u8; 32];
    let mut acc = 0x6a09_e667_f3bc_c908u64;
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        for &p in parts {
            acc = splitmix(acc ^ p);
        }
        acc = splitmix(acc ^ i as u64);
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    seed
}

/// Stream for one scan of one run.
pub fn scan_stream(seed: u64, run: u64, scan: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(&[seed, run, scan, purpose as u64]))
}

/// Stream owned by one tracker instance for a whole run.
pub fn tracker_stream(seed: u64, run: u64, tracker: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(&[seed, run, u64::MAX, Purpose::Tracker as u64, tracker]))
}
