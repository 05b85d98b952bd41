//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are transformed in `f64`. The inverse divides the overlap-added,
//! synthesis-windowed frames by the overlapped squared window, so any window
//! and hop whose squared-window sum stays above [`COLA_FLOOR`] reconstructs
//! the input exactly (up to rounding).

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

/// Minimum squared-window overlap sum accepted by [`istft`].
pub const COLA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn samples(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub center: bool,
}

impl StftParams {
    /// Centered periodic-Hann analysis.
    pub fn hann(n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            window: Window::Hann,
            center: true,
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.n_fft % 2 != 0 {
            return Err(Error::Config(format!("n_fft must be even and positive, got {}", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= n_fft, got hop={} n_fft={}",
                self.hop, self.n_fft
            )));
        }
        let min = self.cola_minimum();
        if min <= COLA_FLOOR {
            return Err(Error::NonInvertible(format!(
                "squared-window overlap sum falls to {min:e} for n_fft={} hop={}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }

    /// Minimum over one hop period of the steady-state squared-window sum.
    pub fn cola_minimum(&self) -> f64 {
        let w = self.window.samples(self.n_fft);
        (0..self.hop)
            .map(|r| {
                w.iter()
                    .skip(r)
                    .step_by(self.hop)
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Frame count for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if self.center {
            len / self.hop + 1
        } else if len <= self.n_fft {
            1
        } else {
            (len - self.n_fft).div_ceil(self.hop) + 1
        }
    }

    fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }
}

/// One-sided complex spectrogram stored frequency-major: bin `f` of frame `t`
/// lives at `f * frames + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Vec<Complex64>,
    pub n_freq: usize,
    pub frames: usize,
    pub params: StftParams,
}

impl ComplexSpectrogram {
    pub fn zeros(params: StftParams, frames: usize) -> Self {
        let n_freq = params.bins();
        Self {
            bins: vec![Complex64::new(0.0, 0.0); n_freq * frames],
            n_freq,
            frames,
            params,
        }
    }

    pub fn from_bins(bins: Vec<Complex64>, frames: usize, params: StftParams) -> Result<Self> {
        let n_freq = params.bins();
        if bins.len() != n_freq * frames {
            return Err(Error::Shape(format!(
                "{} bins do not form a {n_freq}x{frames} grid",
                bins.len()
            )));
        }
        if bins.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Shape("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            bins,
            n_freq,
            frames,
            params,
        })
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[f * self.frames + t]
    }

    #[inline]
    pub fn get_mut(&mut self, f: usize, t: usize) -> &mut Complex64 {
        &mut self.bins[f * self.frames + t]
    }

    pub fn row(&self, f: usize) -> &[Complex64] {
        &self.bins[f * self.frames..(f + 1) * self.frames]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_freq, self.frames, 2)
    }

    pub fn magnitude(&self) -> Vec<f64> {
        magnitude(self)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.bins.iter_mut().for_each(|z| *z *= c);
        out
    }
}

/// `sqrt(re^2 + im^2)` per bin, same layout as the spectrogram.
pub fn magnitude(spec: &ComplexSpectrogram) -> Vec<f64> {
    spec.bins.iter().map(|z| z.norm()).collect()
}

/// Reflect an out-of-range index back into `0..n` without repeating the edge
/// sample, folding as many times as needed.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Forward STFT of a real signal given as `f64` samples.
pub fn stft_f64(signal: &[f64], params: &StftParams) -> Result<ComplexSpectrogram> {
    if signal.is_empty() {
        return Err(Error::EmptyInput("stft needs at least one sample".into()));
    }
    params.validate()?;
    let n = params.n_fft;
    let n_freq = params.bins();
    let frames = params.frame_count(signal.len());
    let window = params.window.samples(n);
    let pad = params.pad() as isize;
    let fft = plan(n, false);
    let len = signal.len();

    let columns: Vec<Vec<Complex64>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let start = (t * params.hop) as isize - pad;
            let mut buf: Vec<Complex64> = (0..n)
                .map(|m| {
                    let idx = start + m as isize;
                    let x = if params.center {
                        signal[reflect_index(idx, len)]
                    } else if (idx as usize) < len {
                        signal[idx as usize]
                    } else {
                        0.0
                    };
                    Complex64::new(x * window[m], 0.0)
                })
                .collect();
            fft.process(&mut buf);
            buf.truncate(n_freq);
            buf
        })
        .collect();

    let mut bins = vec![Complex64::new(0.0, 0.0); n_freq * frames];
    for (t, col) in columns.iter().enumerate() {
        for (f, z) in col.iter().enumerate() {
            bins[f * frames + t] = *z;
        }
    }
    Ok(ComplexSpectrogram {
        bins,
        n_freq,
        frames,
        params: *params,
    })
}

pub fn stft(wave: &Waveform, params: &StftParams) -> Result<ComplexSpectrogram> {
    stft_f64(&wave.to_f64(), params)
}

/// Number of output samples the spectrogram can synthesize.
pub fn synthesizable_len(spec: &ComplexSpectrogram) -> usize {
    let p = &spec.params;
    (spec.frames.saturating_sub(1)) * p.hop + p.n_fft - p.pad()
}

/// Inverse STFT returning `f64` samples.
pub fn istft_f64(spec: &ComplexSpectrogram, length: usize) -> Result<Vec<f64>> {
    let p = &spec.params;
    p.validate()?;
    let n = p.n_fft;
    let span = (spec.frames.saturating_sub(1)) * p.hop + n;
    let pad = p.pad();
    if length + pad > span {
        return Err(Error::Shape(format!(
            "requested {length} samples but the spectrogram spans only {}",
            span.saturating_sub(pad)
        )));
    }
    let window = p.window.samples(n);
    let ifft = plan(n, true);
    let scale = 1.0 / n as f64;
    let n_freq = spec.n_freq;

    let frames: Vec<Vec<f64>> = (0..spec.frames)
        .into_par_iter()
        .map(|t| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for f in 0..n_freq {
                buf[f] = spec.get(f, t);
            }
            for f in 1..n / 2 {
                buf[n - f] = spec.get(f, t).conj();
            }
            ifft.process(&mut buf);
            buf.iter()
                .zip(&window)
                .map(|(z, w)| z.re * scale * w)
                .collect()
        })
        .collect();

    let mut acc = vec![0.0; span];
    let mut norm = vec![0.0; span];
    for (t, frame) in frames.iter().enumerate() {
        let start = t * p.hop;
        for (m, v) in frame.iter().enumerate() {
            acc[start + m] += v;
            norm[start + m] += window[m] * window[m];
        }
    }
    let mut out = Vec::with_capacity(length);
    for j in pad..pad + length {
        if norm[j] <= COLA_FLOOR {
            return Err(Error::NonInvertible(format!(
                "squared-window overlap sum is {:e} at sample {}",
                norm[j],
                j - pad
            )));
        }
        out.push(acc[j] / norm[j]);
    }
    Ok(out)
}

pub fn istft(spec: &ComplexSpectrogram, length: usize, sample_rate: u32) -> Result<Waveform> {
    Ok(Waveform::from_f64(&istft_f64(spec, length)?, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn magnitude_examples() {
        let p = StftParams::hann(2, 1);
        let spec = ComplexSpectrogram::from_bins(
            vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
            1,
            p,
        )
        .unwrap();
        assert_eq!(spec.magnitude(), vec![5.0, 0.0]);
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let spec = stft_f64(&vec![0.0; 1000], &StftParams::hann(256, 64)).unwrap();
        assert!(spec.bins.iter().all(|z| z.norm() == 0.0));
        let back = istft_f64(&spec, 1000).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_follows_center_rule() {
        let p = StftParams::hann(4096, 2048);
        let spec = stft_f64(&noise(48000, 1), &p).unwrap();
        assert_eq!(spec.frames, 48000 / 2048 + 1);
        assert_eq!(spec.n_freq, 2049);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            stft_f64(&[], &StftParams::hann(8, 4)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(StftParams::hann(7, 2).validate().is_err());
        assert!(StftParams::hann(8, 9).validate().is_err());
        // periodic Hann with hop == n_fft leaves zeros at frame starts
        assert!(matches!(
            StftParams::hann(8, 8).validate(),
            Err(Error::NonInvertible(_))
        ));
    }

    #[test]
    fn short_signals_reflect_safely() {
        let p = StftParams::hann(64, 16);
        for len in [1usize, 2, 5, 31, 33] {
            let x = noise(len, len as u64);
            let spec = stft_f64(&x, &p).unwrap();
            let back = istft_f64(&spec, len).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "len {len}: {err}");
        }
    }

    #[test]
    fn linearity_of_synthesis() {
        let p = StftParams::hann(512, 128);
        let a = noise(4000, 2);
        let b = noise(4000, 3);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ra = istft_f64(&stft_f64(&a, &p).unwrap(), 4000).unwrap();
        let rb = istft_f64(&stft_f64(&b, &p).unwrap(), 4000).unwrap();
        let rs = istft_f64(&stft_f64(&sum, &p).unwrap(), 4000).unwrap();
        for i in 0..4000 {
            assert!((rs[i] - ra[i] - rb[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_is_homogeneous() {
        let p = StftParams::hann(256, 64);
        let x = noise(2000, 4);
        let ax: Vec<f64> = x.iter().map(|v| 3.5 * v).collect();
        let s = stft_f64(&x, &p).unwrap();
        let sa = stft_f64(&ax, &p).unwrap();
        for (z, za) in s.bins.iter().zip(&sa.bins) {
            let expect = z * 3.5;
            assert!((za - expect).norm() <= 1e-12 * expect.norm().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn magnitude_ignores_global_phase() {
        let p = StftParams::hann(128, 32);
        let s = stft_f64(&noise(1000, 5), &p).unwrap();
        let rot = Complex64::from_polar(1.0, 0.83);
        let mut r = s.clone();
        r.bins.iter_mut().for_each(|z| *z *= rot);
        for (a, b) in s.magnitude().iter().zip(r.magnitude()) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn too_long_request_rejected() {
        let p = StftParams::hann(64, 16);
        let s = stft_f64(&noise(100, 6), &p).unwrap();
        assert_eq!(synthesizable_len(&s), (s.frames - 1) * 16 + 32);
        assert!(istft_f64(&s, synthesizable_len(&s)).is_ok());
        assert!(matches!(
            istft_f64(&s, synthesizable_len(&s) + 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uncentered_frames_cover_signal() {
        let p = StftParams {
            n_fft: 64,
            hop: 16,
            window: Window::Hann,
            center: false,
        };
        assert_eq!(p.frame_count(64), 1);
        assert_eq!(p.frame_count(65), 2);
        let x = noise(300, 7);
        let s = stft_f64(&x, &p).unwrap();
        // samples inside the first hop have a near-zero window sum
        assert!(istft_f64(&s, 300).is_err());
    }
}
