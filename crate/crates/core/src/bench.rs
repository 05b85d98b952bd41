//! Real-time-factor measurement of the restoration path.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::degrade::rng;
use crate::error::{Error, Result};
use crate::generator::Generator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub seconds: f64,
    pub runs: usize,
    pub warmup: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { seconds: 10.0, runs: 30, warmup: 3, threads: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: usize,
    pub warmup: usize,
    pub threads: usize,
    pub sample_rate: u32,
    pub audio_s: f64,
    pub median_s: f64,
    pub p90_s: f64,
    pub mean_s: f64,
    /// `audio_s / median_s`; above 1 is faster than real time.
    pub rtf: f64,
}

impl BenchReport {
    pub fn from_timings(timings: &[f64], audio_s: f64, sample_rate: u32, warmup: usize, threads: usize) -> Result<Self> {
        if timings.is_empty() {
            return Err(Error::Config("benchmark needs at least one timed run".into()));
        }
        let mut sorted = timings.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median_s = percentile(&sorted, 0.5);
        Ok(Self {
            runs: timings.len(),
            warmup,
            threads,
            sample_rate,
            audio_s,
            median_s,
            p90_s: percentile(&sorted, 0.9),
            mean_s: sorted.iter().sum::<f64>() / sorted.len() as f64,
            rtf: audio_s / median_s,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Seeded white noise at -20 dBFS RMS.
pub fn bench_input(seconds: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(seconds > 0.0) {
        return Err(Error::Config(format!("benchmark duration must be positive, got {seconds}")));
    }
    let len = (seconds * sample_rate as f64).round() as usize;
    let mut r = rng::seeded(seed);
    let samples = (0..len).map(|_| (0.1 * rng::standard_normal(&mut r)) as f32).collect();
    Waveform::new(samples, sample_rate)
}

pub fn resolve_threads(threads: usize) -> usize {
    if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    }
}

/// Keep freed memory in the process heap instead of returning it to the
/// kernel. Restoration allocates and drops activations of tens of megabytes
/// per layer; with glibc defaults each one is a fresh zero-filled mapping and
/// page faults cost a sizeable share of the runtime. No-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        const M_TRIM_THRESHOLD: i32 = -1;
        const M_TOP_PAD: i32 = -2;
        const M_MMAP_THRESHOLD: i32 = -3;
        extern "C" {
            fn mallopt(param: i32, value: i32) -> i32;
        }
        // SAFETY: mallopt only adjusts allocator tunables; it is called
        // with documented parameters and valid values.
        unsafe {
            mallopt(M_MMAP_THRESHOLD, 32 << 20);
            mallopt(M_TRIM_THRESHOLD, i32::MAX);
            mallopt(M_TOP_PAD, 256 << 20);
        }
    }
}

/// Warm up, then time `runs` restore calls on a pinned thread pool.
pub fn run_bench(model: &Generator, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let threads = resolve_threads(opts.threads);
    let input = bench_input(opts.seconds, model.config().sample_rate, opts.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let timings = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..opts.warmup {
            model.restore(&input)?;
        }
        (0..opts.runs)
            .map(|_| {
                let start = Instant::now();
                model.restore(&input)?;
                Ok(start.elapsed().as_secs_f64())
            })
            .collect()
    })?;
    BenchReport::from_timings(&timings, input.duration_secs(), input.sample_rate, opts.warmup, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{init_weights, ModelConfig};

    #[test]
    fn statistics() {
        let r = BenchReport::from_timings(&[3.0, 1.0, 2.0, 4.0], 10.0, 48000, 0, 1).unwrap();
        assert_eq!(r.median_s, 2.5);
        assert!((r.p90_s - 3.7).abs() < 1e-12);
        assert_eq!(r.mean_s, 2.5);
        assert_eq!(r.rtf, 4.0);
        assert!(BenchReport::from_timings(&[], 1.0, 48000, 0, 1).is_err());
    }

    #[test]
    fn input_is_deterministic() {
        let a = bench_input(0.5, 16000, 7).unwrap();
        let b = bench_input(0.5, 16000, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.len(), 8000);
        assert_ne!(a.samples, bench_input(0.5, 16000, 8).unwrap().samples);
    }

    #[test]
    fn toy_bench_report() {
        let config = ModelConfig::toy();
        let model = Generator::new(config.clone(), &init_weights(&config, 1).unwrap()).unwrap();
        let opts = BenchOptions { seconds: 0.25, runs: 5, warmup: 1, threads: 1, seed: 0 };
        let r = run_bench(&model, &opts).unwrap();
        assert_eq!(r.runs, 5);
        assert!(r.median_s > 0.0 && r.median_s <= r.p90_s && r.rtf > 0.0);
    }
}
