//! Random number streams.
//!
//! Every stream is a ChaCha20 generator (`rand_chacha::ChaCha20Rng`). A task
//! seed `s` keys `ChaCha20Rng::seed_from_u64(s)`; the fixed stream index
//! selects the substream, so inputs, labels and noise can be regenerated
//! independently of each other and of thread scheduling. Monte Carlo streams
//! are keyed by the pair `(s, mc_seed)` written little-endian into the
//! 32-byte key.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Inputs = 1,
    Labels = 2,
    Noise = 3,
    MonteCarlo = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn monte_carlo_stream(task_seed: u64, mc_seed: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&task_seed.to_le_bytes());
    key[8..16].copy_from_slice(&mc_seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(Stream::MonteCarlo as u64);
    rng
}

/// SplitMix64 finalizer, used to derive per-cell seeds from a base seed.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
