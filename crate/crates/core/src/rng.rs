//! Seeded random streams.
//!
//! Every stochastic step draws from ChaCha8 (via `rand_chacha`, whose output
//! is stable across platforms and releases). A stream is keyed by the user
//! seed plus a [`Domain`] tag, and the ChaCha stream id selects the item
//! index (fiber number, iteration number, class number). Results therefore do
//! not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent consumers of randomness. The discriminants are part of the
/// on-disk reproducibility contract; never renumber them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Generator = 1,
    Split = 2,
    Init = 3,
    Batch = 4,
    DefaultSet = 5,
    Subsample = 6,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"fs2net\0\x01");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
