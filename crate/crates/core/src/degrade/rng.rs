//! Randomness for the degradation pipeline.
//!
//! Every draw comes from ChaCha8 (a counter-based stream cipher generator,
//! `rand_chacha::ChaCha8Rng`) keyed by a 64-bit seed, with one stream per
//! pipeline stage. Its output is specified bit-for-bit, so a seed and a trace
//! mean the same thing on every platform. Gaussians use the Box–Muller
//! transform written out here rather than a library sampler whose algorithm
//! could change between versions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DegradeRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DegradeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> DegradeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi]`; `lo == hi` returns `lo` exactly.
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    lo + (hi - lo) * unit(rng)
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // 1 - unit is in (0, 1], so the logarithm is finite
    let u1 = 1.0 - unit(rng);
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn index(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Pink (1/f) noise with unit RMS, from a fixed bank of one-pole filters over
/// white Gaussian noise.
pub fn pink_noise(len: usize, seed: u64) -> Vec<f64> {
    const POLES: [f64; 6] = [0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616];
    const GAINS: [f64; 6] = [0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980];
    let mut rng = seeded(seed);
    let mut state = [0.0; 6];
    let mut held = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w = standard_normal(&mut rng);
            for ((s, p), g) in state.iter_mut().zip(POLES).zip(GAINS) {
                *s = p * *s + g * w;
            }
            let y = state.iter().sum::<f64>() + held + 0.5362 * w;
            held = 0.115926 * w;
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}
