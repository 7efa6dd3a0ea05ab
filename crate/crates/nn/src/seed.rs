//! Seed derivation.
//!
//! Every stochastic step takes its seed from `derive_seed(root, label, path)`:
//! the label is hashed with 64-bit FNV-1a, then the root and each path
//! element are folded in through the SplitMix64 finalizer. Distinct
//! `(label, path)` pairs give statistically independent streams, and a
//! subcommand can recreate any stream from the root seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn derive_seed(root: u64, label: &str, path: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ fnv1a(label.as_bytes()));
    for &p in path {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

pub fn rng_for(root: u64, label: &str, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, path))
}
