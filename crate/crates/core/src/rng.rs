//! Seeded randomness. Every stochastic operation in the crate draws from a
//! ChaCha8 stream derived from a user seed and a fixed stream label, so
//! results do not depend on call order across unrelated components.

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut SeededRng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > f64::MIN_POSITIVE {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

/// Stream labels, one per consumer.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const TSNE: u64 = 5;
    pub const CLASSIFIER: u64 = 6;
    pub const CLASSIFIER_SPLIT: u64 = 7;
}
