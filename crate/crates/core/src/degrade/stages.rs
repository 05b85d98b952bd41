//! Individual corruption stages. Every stage returns exactly as many samples
//! as it was given.

use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::rng::{seeded, standard_normal, unit};
use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::spectral::{istft_f64, stft_f64, ComplexSpectrogram, StftParams};

/// STFT grid used by [`freq_shape`].
pub const SHAPE_FFT: usize = 2048;
pub const SHAPE_HOP: usize = 512;
pub const MIN_GAIN_DB: f64 = -60.0;
pub const MAX_GAIN_DB: f64 = 12.0;
/// Decay constant of the reverb envelope `exp(-DECAY * t / rt60)`: `3 ln 10`
/// (about 6.91), so the envelope is exactly 60 dB down at `t = rt60`.
pub const DECAY: f64 = 3.0 * std::f64::consts::LN_10;
/// One-pole sections in the gain-envelope smoother.
pub const GAIN_POLES: usize = 4;

/// Gain curve over frequency: `(hz, db)` control points, linear in dB
/// against log-frequency between points and flat outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub points: Vec<(f64, f64)>,
}

impl GainCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("gain curve needs at least one point".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config("gain curve frequencies must increase".into()));
            }
        }
        for &(hz, db) in &points {
            if !(hz > 0.0 && hz.is_finite()) || !(MIN_GAIN_DB..=MAX_GAIN_DB).contains(&db) {
                return Err(Error::Config(format!(
                    "gain point ({hz} Hz, {db} dB) outside (0, inf) x [{MIN_GAIN_DB}, {MAX_GAIN_DB}]"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn flat() -> Self {
        Self { points: vec![(1000.0, 0.0)] }
    }

    pub fn db_at(&self, hz: f64) -> f64 {
        let p = &self.points;
        if hz <= p[0].0 {
            return p[0].1;
        }
        let last = p[p.len() - 1];
        if hz >= last.0 {
            return last.1;
        }
        let i = p.partition_point(|&(f, _)| f <= hz);
        let (f0, d0) = p[i - 1];
        let (f1, d1) = p[i];
        let a = (hz.ln() - f0.ln()) / (f1.ln() - f0.ln());
        d0 + a * (d1 - d0)
    }
}

fn to_wave(samples: &[f64], sample_rate: u32) -> Result<Waveform> {
    Waveform::new(samples.iter().map(|&v| v as f32).collect(), sample_rate)
}

/// Multiply STFT magnitudes by `curve`, leaving phases untouched.
pub fn freq_shape(wave: &Waveform, curve: &GainCurve) -> Result<Waveform> {
    if wave.is_empty() {
        return Ok(wave.clone());
    }
    let params = StftParams::hann(SHAPE_FFT, SHAPE_HOP);
    let mut spec = stft_f64(&wave.to_f64(), &params)?;
    let bin_hz = wave.sample_rate as f64 / SHAPE_FFT as f64;
    for f in 0..spec.n_freq {
        // DC takes the lowest point's gain
        let db = curve.db_at((f as f64 * bin_hz).max(f64::MIN_POSITIVE));
        let g = 10f64.powf(db / 20.0);
        for t in 0..spec.frames {
            *spec.get_mut(f, t) *= g;
        }
    }
    to_wave(&istft_f64(&spec, wave.len())?, wave.sample_rate)
}

/// Envelope of the reverb tail relative to `t = 0`.
pub fn reverb_envelope(t_secs: f64, rt60: f64) -> f64 {
    (-DECAY * t_secs / rt60).exp()
}

/// Unit direct tap followed by exponentially decaying Gaussian noise whose
/// energy is normalized to 1. Length `ceil(rt60 * sample_rate) + 1`.
pub fn impulse_response(rt60: f64, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    if !(0.1..=3.0).contains(&rt60) {
        return Err(Error::Config(format!("rt60 must lie in [0.1, 3.0] s, got {rt60}")));
    }
    let sr = sample_rate as f64;
    let len = (rt60 * sr).ceil() as usize + 1;
    let mut rng = seeded(seed);
    let mut ir = vec![0.0; len];
    for (n, v) in ir.iter_mut().enumerate().skip(1) {
        *v = standard_normal(&mut rng) * reverb_envelope(n as f64 / sr, rt60);
    }
    let tail = ir[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if tail > 0.0 {
        ir[1..].iter_mut().for_each(|v| *v /= tail);
    }
    ir[0] = 1.0;
    Ok(ir)
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let h = &h[..h.len().min(x.len())];
    let size = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |s: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        b.iter_mut().zip(s).for_each(|(z, &v)| z.re = v);
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..x.len()].iter().map(|z| z.re / size as f64).collect()
}

/// `(1 - wet) dry + wet (ir * dry)`.
pub fn reverb(wave: &Waveform, rt60: f64, wet: f64, seed: u64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&wet) {
        return Err(Error::Config(format!("wet must lie in [0, 1], got {wet}")));
    }
    let ir = impulse_response(rt60, wave.sample_rate, seed)?;
    if wet == 0.0 {
        return Ok(wave.clone());
    }
    let dry = wave.to_f64();
    let wet_sig = convolve_truncated(&dry, &ir);
    let out: Vec<f64> = dry.iter().zip(&wet_sig).map(|(d, w)| (1.0 - wet) * d + wet * w).collect();
    to_wave(&out, wave.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipCurve {
    Hard,
    Tanh,
    Cubic,
}

impl ClipCurve {
    pub const ALL: [ClipCurve; 3] = [ClipCurve::Hard, ClipCurve::Tanh, ClipCurve::Cubic];

    /// Shaping function, bounded by 1 in magnitude.
    pub fn apply(self, u: f64) -> f64 {
        match self {
            ClipCurve::Hard => u.clamp(-1.0, 1.0),
            ClipCurve::Tanh => u.tanh(),
            ClipCurve::Cubic => {
                let c = u.clamp(-1.0, 1.0);
                (c - c * c * c / 3.0) * 1.5
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClipCurve::Hard => "hard",
            ClipCurve::Tanh => "tanh",
            ClipCurve::Cubic => "cubic",
        }
    }
}

impl FromStr for ClipCurve {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(ClipCurve::Hard),
            "tanh" => Ok(ClipCurve::Tanh),
            "cubic" => Ok(ClipCurve::Cubic),
            other => Err(Error::Parse(format!("unknown clip curve {other:?}"))),
        }
    }
}

/// `curve(drive * x)`; output stays within `[-1, 1]`.
pub fn clip(wave: &Waveform, curve: ClipCurve, drive: f64) -> Result<Waveform> {
    if !(drive >= 1.0 && drive.is_finite()) {
        return Err(Error::Config(format!("drive must be at least 1, got {drive}")));
    }
    let out: Vec<f64> = wave.samples.iter().map(|&x| curve.apply(drive * x as f64)).collect();
    to_wave(&out, wave.sample_rate)
}

/// Mean square of `x`.
pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// SNR in dB of `clean` against the residual `noisy - clean`.
pub fn measured_snr_db(clean: &Waveform, noisy: &Waveform) -> f64 {
    let c = clean.to_f64();
    let residual: Vec<f64> = noisy.samples.iter().zip(&c).map(|(&n, &s)| n as f64 - s).collect();
    10.0 * (power(&c) / power(&residual)).log10()
}

/// `noise` looped from `offset` to cover the signal length.
pub fn loop_noise(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Add `noise` (looped or cropped, starting at `offset`) scaled so the
/// signal-to-noise power ratio is `snr_db`.
pub fn add_noise(wave: &Waveform, noise: &[f64], offset: usize, snr_db: f64) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr must be finite, got {snr_db}")));
    }
    let x = wave.to_f64();
    let ps = power(&x);
    if x.is_empty() || ps == 0.0 {
        return Err(Error::SilentInput("cannot set an SNR against a silent signal".into()));
    }
    if noise.is_empty() {
        return Err(Error::SilentInput("noise source is empty".into()));
    }
    let n = loop_noise(noise, x.len(), offset);
    let pn = power(&n);
    if pn == 0.0 {
        return Err(Error::SilentInput("noise segment is silent".into()));
    }
    let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let out: Vec<f64> = x.iter().zip(&n).map(|(s, v)| s + scale * v).collect();
    to_wave(&out, wave.sample_rate)
}

/// Analysis grids available to [`spectral_corrupt`]: window in
/// {512, 1024, 2048}, hop in {256, 512, 1024}, hop strictly below window.
pub fn corrupt_grids() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for w in [512, 1024, 2048] {
        for h in [256, 512, 1024] {
            if h < w {
                out.push((w, h));
            }
        }
    }
    out
}

/// Zero every frequency row with probability `mask_fraction` and rotate
/// every bin by an independent `N(0, phase_std)` angle. Draw order: one
/// uniform per row, then one normal per bin in frequency-major order.
pub fn corrupt_spectrum(spec: &mut ComplexSpectrogram, mask_fraction: f64, phase_std: f64, seed: u64) {
    let mut rng = seeded(seed);
    let mask: Vec<bool> = (0..spec.n_freq).map(|_| unit(&mut rng) < mask_fraction).collect();
    for (f, &masked) in mask.iter().enumerate() {
        for t in 0..spec.frames {
            let theta = phase_std * standard_normal(&mut rng);
            let z = spec.get_mut(f, t);
            *z = if masked { Complex64::new(0.0, 0.0) } else { *z * Complex64::from_polar(1.0, theta) };
        }
    }
}

pub fn spectral_corrupt(
    wave: &Waveform,
    window: usize,
    hop: usize,
    mask_fraction: f64,
    phase_std: f64,
    seed: u64,
) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&mask_fraction) || !(phase_std >= 0.0 && phase_std.is_finite()) {
        return Err(Error::Config(format!(
            "mask fraction {mask_fraction} or phase std {phase_std} out of range"
        )));
    }
    if wave.is_empty() {
        return Ok(wave.clone());
    }
    let params = StftParams::hann(window, hop);
    let mut spec = stft_f64(&wave.to_f64(), &params)?;
    corrupt_spectrum(&mut spec, mask_fraction, phase_std, seed);
    to_wave(&istft_f64(&spec, wave.len())?, wave.sample_rate)
}

/// Smooth envelope in `[-1, 1]`: Gaussian noise through [`GAIN_POLES`]
/// one-pole lowpass sections at `cutoff_hz`, scaled to unit peak.
pub fn gain_envelope(len: usize, sample_rate: u32, cutoff_hz: f64, seed: u64) -> Result<Vec<f64>> {
    let sr = sample_rate as f64;
    if !(cutoff_hz > 0.0 && cutoff_hz <= 20.0) {
        return Err(Error::Config(format!("gain cutoff must lie in (0, 20] Hz, got {cutoff_hz}")));
    }
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz / sr).exp();
    let mut rng = seeded(seed);
    let mut x: Vec<f64> = (0..len).map(|_| standard_normal(&mut rng)).collect();
    for _ in 0..GAIN_POLES {
        let mut y = 0.0;
        for v in x.iter_mut() {
            y += alpha * (*v - y);
            *v = y;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(x)
}

/// `(1 + depth * e(t)) x(t)` with `e` from [`gain_envelope`].
pub fn time_varying_gain(wave: &Waveform, cutoff_hz: f64, depth: f64, seed: u64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::Config(format!("depth must lie in [0, 1], got {depth}")));
    }
    let env = gain_envelope(wave.len(), wave.sample_rate, cutoff_hz, seed)?;
    let out: Vec<f64> = wave
        .samples
        .iter()
        .zip(&env)
        .map(|(&x, e)| (1.0 + depth * e) * x as f64)
        .collect();
    to_wave(&out, wave.sample_rate)
}
