use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent random streams within one replicate and centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Covariates = 0,
    Treatment = 1,
    Outcome = 2,
    Pooling = 3,
}

/// ChaCha8 generator whose 256-bit key is `(base_seed, replicate, centre, stream)`.
///
/// Distinct keys give unrelated streams, so draws never depend on the order
/// in which replicates or centres are generated.
pub fn stream_rng(base_seed: u64, replicate: u64, centre: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(&centre.to_le_bytes());
    key[24..].copy_from_slice(&(stream as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A 64-bit seed drawn from a stream, for APIs that take a plain seed.
pub fn derived_seed(base_seed: u64, replicate: u64, centre: u64, stream: Stream) -> u64 {
    stream_rng(base_seed, replicate, centre, stream).next_u64()
}
