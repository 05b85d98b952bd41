//! Mel-spaced sub-band partition of the frequency axis, per-band power
//! envelopes, normalized feature packing and the inverse reassembly.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nncore::Matrix;
use crate::spectral::ComplexSpectrogram;

/// Default envelope stabilizer.
pub const DEFAULT_EPS: f64 = 1e-8;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Contiguous partition of `n_freq` bins into bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandLayout {
    widths: Vec<usize>,
    boundaries: Vec<usize>,
    n_freq: usize,
}

impl BandLayout {
    pub fn from_widths(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Layout("layout needs at least one band".into()));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(Error::Layout(format!("band {i} has zero width")));
        }
        let mut boundaries = Vec::with_capacity(widths.len() + 1);
        boundaries.push(0);
        for w in &widths {
            boundaries.push(boundaries.last().unwrap() + w);
        }
        let n_freq = *boundaries.last().unwrap();
        Ok(Self {
            widths,
            boundaries,
            n_freq,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Cumulative bin offsets, `n_band + 1` entries from 0 to `n_freq`.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_band(&self) -> usize {
        self.widths.len()
    }

    pub fn range(&self, band: usize) -> std::ops::Range<usize> {
        self.boundaries[band]..self.boundaries[band + 1]
    }

    fn check(&self, spec: &ComplexSpectrogram) -> Result<()> {
        if spec.n_freq != self.n_freq {
            return Err(Error::Layout(format!(
                "layout covers {} bins but spectrogram has {}",
                self.n_freq, spec.n_freq
            )));
        }
        Ok(())
    }
}

/// Partition `n_freq` bins into `n_band` bands with mel-spaced edges over
/// `[0, sample_rate / 2]`.
///
/// Each band's ideal width is the distance between consecutive mel-spaced
/// edges (in bins) and is floored, with a minimum of one bin. The remainder is
/// handed out one bin at a time starting from the highest band; an excess
/// (from the one-bin minimum) is taken from the widest bands. Both keep the
/// widths nondecreasing and summing to `n_freq`.
pub fn mel_band_layout(n_freq: usize, n_band: usize, sample_rate: u32) -> Result<BandLayout> {
    if n_band == 0 || n_band > n_freq {
        return Err(Error::Layout(format!(
            "need 1 <= n_band <= F, got n_band={n_band} F={n_freq}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..=n_band)
        .map(|k| mel_to_hz(top * k as f64 / n_band as f64) / nyquist * n_freq as f64)
        .collect();
    let mut widths: Vec<usize> = edges
        .windows(2)
        .map(|e| ((e[1] - e[0]).floor() as usize).max(1))
        .collect();

    let mut total: usize = widths.iter().sum();
    while total < n_freq {
        for w in widths.iter_mut().rev() {
            if total == n_freq {
                break;
            }
            *w += 1;
            total += 1;
        }
    }
    while total > n_freq {
        let max = *widths.iter().max().unwrap();
        let i = widths.iter().position(|&w| w == max).unwrap();
        widths[i] -= 1;
        total -= 1;
    }
    BandLayout::from_widths(widths)
}

/// Per-band, per-frame power envelope, `n_band x frames`, band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnvelope {
    pub values: Vec<f64>,
    pub n_band: usize,
    pub frames: usize,
    pub eps: f64,
}

impl BandEnvelope {
    pub fn get(&self, band: usize, t: usize) -> f64 {
        self.values[band * self.frames + t]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.frames..(band + 1) * self.frames]
    }
}

/// `p_i(t) = sqrt(sum over band bins of re^2 + im^2, plus eps)`.
pub fn band_envelope(spec: &ComplexSpectrogram, layout: &BandLayout, eps: f64) -> Result<BandEnvelope> {
    layout.check(spec)?;
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("eps must be nonnegative, got {eps}")));
    }
    let frames = spec.frames;
    let mut values = vec![0.0; layout.n_band() * frames];
    for band in 0..layout.n_band() {
        let out = &mut values[band * frames..(band + 1) * frames];
        for f in layout.range(band) {
            for (acc, z) in out.iter_mut().zip(spec.row(f)) {
                *acc += z.re * z.re + z.im * z.im;
            }
        }
        out.iter_mut().for_each(|v| *v = (*v + eps).sqrt());
    }
    Ok(BandEnvelope {
        values,
        n_band: layout.n_band(),
        frames,
        eps,
    })
}

/// Network input: one `(2 bw_i + 1) x frames` matrix per band.
///
/// Rows `2k` and `2k + 1` hold the real and imaginary part of the band's
/// `k`-th bin divided by the envelope; the last row is the log envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBandFeatures {
    pub bands: Vec<Matrix>,
    pub envelope: BandEnvelope,
}

pub fn pack_band_features(
    spec: &ComplexSpectrogram,
    layout: &BandLayout,
    eps: f64,
) -> Result<PackedBandFeatures> {
    let envelope = band_envelope(spec, layout, eps)?;
    let frames = spec.frames;
    let bands = (0..layout.n_band())
        .map(|band| {
            let width = layout.widths[band];
            let p = envelope.band(band);
            let mut m = Matrix::zeros(2 * width + 1, frames);
            for (k, f) in layout.range(band).enumerate() {
                for (t, z) in spec.row(f).iter().enumerate() {
                    // eps = 0 with a silent band gives 0/0; such bins carry no signal
                    let inv = if p[t] > 0.0 { 1.0 / p[t] } else { 0.0 };
                    m.set(2 * k, t, z.re * inv);
                    m.set(2 * k + 1, t, z.im * inv);
                }
            }
            for (t, &pt) in p.iter().enumerate() {
                m.set(2 * width, t, pt.ln());
            }
            m
        })
        .collect();
    Ok(PackedBandFeatures { bands, envelope })
}

/// One band's complex bins, `width x frames`, bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    pub width: usize,
    pub frames: usize,
    pub bins: Vec<Complex64>,
}

pub fn slice_bands(spec: &ComplexSpectrogram, layout: &BandLayout) -> Result<Vec<BandSpectrum>> {
    layout.check(spec)?;
    Ok((0..layout.n_band())
        .map(|band| {
            let r = layout.range(band);
            BandSpectrum {
                width: r.len(),
                frames: spec.frames,
                bins: spec.bins[r.start * spec.frames..r.end * spec.frames].to_vec(),
            }
        })
        .collect())
}

/// Concatenate band outputs along frequency, in band order.
pub fn reassemble(
    bands: &[BandSpectrum],
    layout: &BandLayout,
    params: crate::spectral::StftParams,
) -> Result<ComplexSpectrogram> {
    if bands.len() != layout.n_band() {
        return Err(Error::Layout(format!(
            "{} band outputs for a {}-band layout",
            bands.len(),
            layout.n_band()
        )));
    }
    let frames = bands.first().map(|b| b.frames).unwrap_or(0);
    let mut bins = Vec::with_capacity(layout.n_freq() * frames);
    for (i, (band, &width)) in bands.iter().zip(&layout.widths).enumerate() {
        if band.width != width || band.frames != frames || band.bins.len() != width * frames {
            return Err(Error::Layout(format!(
                "band {i} is {}x{} but the layout expects {width}x{frames}",
                band.width, band.frames
            )));
        }
        bins.extend_from_slice(&band.bins);
    }
    if params.bins() != layout.n_freq() {
        return Err(Error::Layout(format!(
            "layout covers {} bins but STFT params imply {}",
            layout.n_freq(),
            params.bins()
        )));
    }
    ComplexSpectrogram::from_bins(bins, frames, params)
}
