//! Seeded random substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by
//! `(seed, domain, index)`, so a task's draws depend only on its own index and
//! never on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent purposes that draw from the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Imputation = 1,
    Bootstrap = 2,
    BootstrapImputation = 3,
    ChisqMix = 4,
    Replication = 5,
    Generator = 6,
    StartJitter = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ splitmix64(index.wrapping_add(0xA5A5)))
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive_seed(seed, domain, index));
    rng
}
