//! Counter-addressable random streams.
//!
//! Every stochastic quantity in this crate is drawn from a ChaCha8 stream
//! addressed by `(seed, stream, position)`. Streams never share state, so
//! paths can be generated in any order (or in parallel) and regenerated
//! bit-identically from their address alone.

pub use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};

/// SplitMix64 finalizer. Used to derive independent sub-seeds from a master
/// seed without consuming stream state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed `index` of a master seed.
pub fn seed_for(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// RNG for stream `stream` of `seed`. Positions within the stream advance
/// two 32-bit words per `next_u64` call.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn unit_open_closed(x: u64) -> f64 {
    // (0, 1]: the +1 keeps ln() finite below.
    ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(x: u64) -> f64 {
    // [0, 1)
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One Box-Muller pair of independent standard normals.
///
/// Consumes exactly two `u64` draws (four ChaCha words), which is what makes
/// per-step random access possible: the pair for step `k` starts at word
/// position `4k`.
#[inline]
pub fn standard_normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open_closed(rng.next_u64());
    let u2 = unit_closed_open(rng.next_u64());
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Words consumed per Box-Muller pair; see [`standard_normal_pair`].
pub(crate) const WORDS_PER_PAIR: u128 = 4;

/// Iterator over single standard normals, buffering the second half of each
/// Box-Muller pair. Used for weight initialization.
pub struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    pub fn new(seed: u64) -> Self {
        Normals {
            rng: stream_rng(seed, 0),
            spare: None,
        }
    }
}

impl Iterator for Normals {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if let Some(z) = self.spare.take() {
            return Some(z);
        }
        let (z0, z1) = standard_normal_pair(&mut self.rng);
        self.spare = Some(z1);
        Some(z0)
    }
}
