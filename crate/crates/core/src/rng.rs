//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, stream, word)`: the seed selects a
//! ChaCha8 key, the stream id selects the time step and the word position
//! selects the lattice mode. Any draw can therefore be regenerated in
//! isolation, and generation order never changes the result.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 64-bit finaliser from SplitMix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child of `seed` (replicates, restarts).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

fn key(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut s = seed;
    for chunk in out.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}

/// Words reserved per mode: two `u64` draws feed one Box–Muller pair.
pub const WORDS_PER_MODE: u128 = 4;

/// Sequential reader over the `(seed, stream)` sub-stream positioned at a
/// mode index.
pub struct ModeStream {
    rng: ChaCha8Rng,
}

impl ModeStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key(seed));
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn seek(&mut self, mode: usize) {
        self.rng.set_word_pos(mode as u128 * WORDS_PER_MODE);
    }

    /// Two independent standard normals from the next mode slot.
    #[inline]
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        box_muller(a, b)
    }
}

#[inline]
pub fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// General-purpose seeded generator for optimiser restarts, bootstrap and
/// pair sampling.
pub fn generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(seed))
}
