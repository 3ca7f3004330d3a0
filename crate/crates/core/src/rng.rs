//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator addressed by
//! `(master seed, stream, step)`: the master seed selects the key, the stream
//! selects the ChaCha stream id, and the step selects a disjoint 2^32-word
//! block of the keystream. A draw therefore depends only on its address, never
//! on scheduling, so ensembles are bitwise reproducible for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Tags that keep streams of different purposes disjoint. The tag occupies the
/// top 16 bits of the ChaCha stream id; the index the low 48.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Trajectory = 1,
    Particle = 2,
    Resample = 3,
    Cloud = 4,
    Coupling = 5,
    Sampling = 6,
}

pub type StreamRng = ChaCha8Rng;

/// Generator for one step of one stream.
pub fn stream_rng(seed: u64, purpose: Purpose, index: u64, step: u64) -> StreamRng {
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & ((1 << 48) - 1)));
    rng.set_word_pos((step as u128) << 32);
    rng
}

/// Uniform on the half-open interval (0, 1].
pub fn open_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Uniform point in the Euclidean ball of the given radius.
pub fn uniform_in_ball(dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dir = unit_direction(dim, rng);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|x| x * r).collect()
}

/// Uniform point on the unit sphere.
pub fn unit_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}
