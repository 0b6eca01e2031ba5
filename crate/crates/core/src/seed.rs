//! Explicit RNG derivation. One experiment seed fans out to independent
//! ChaCha streams, one per consumer, so that adding draws in one place never
//! shifts the randomness seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ExpRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    SourceData = 1,
    TargetData = 2,
    ModelInit = 3,
    SourceTraining = 4,
    BatchStream = 5,
    Adaptation = 6,
}

pub fn rng_for(seed: u64, purpose: Purpose) -> ExpRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
