//! Training objectives, evaluated but never differentiated here.
//!
//! Reconstruction `‖·‖₁` terms are means over elements, so default weights do
//! not depend on signal length. The feature-matching numerator is a sum,
//! set against the mean magnitude in its denominator.
//!
//! The phase term is an approximation built from three anti-wrapped phase
//! distances (instantaneous phase, group delay, instantaneous frequency).
//! It stands in for a published phase-aware loss and is not numerically
//! equivalent to it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::discriminator::{BranchOutput, FeatureMap};
use crate::error::{Error, Result};
use crate::spectral::{stft_f64, ComplexSpectrogram, StftParams};

/// Stabilizer in the feature-matching denominator.
pub const FM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub wav: f64,
    pub spec: f64,
    pub omni: f64,
    pub adv: f64,
    pub fm: f64,
    pub spec_resolutions: Vec<StftParams>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            wav: 1.0,
            spec: 1.0,
            omni: 1.0,
            adv: 0.1,
            fm: 2.0,
            spec_resolutions: default_resolutions(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("wav", self.wav), ("spec", self.spec), ("omni", self.omni), ("adv", self.adv), ("fm", self.fm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("lambda_{name} must be finite and nonnegative, got {v}")));
            }
        }
        for p in &self.spec_resolutions {
            p.validate()?;
        }
        Ok(())
    }
}

pub fn default_resolutions() -> Vec<StftParams> {
    [(2048, 512), (1024, 256), (512, 128)]
        .iter()
        .map(|&(n, h)| StftParams::hann(n, h))
        .collect()
}

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Mean absolute sample difference.
pub fn wav_l1(y_hat: &Waveform, y: &Waveform) -> Result<f64> {
    check_lengths(y_hat, y)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = y_hat
        .samples
        .iter()
        .zip(&y.samples)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / y.len() as f64)
}

/// Mean over resolutions of the mean absolute STFT-magnitude difference.
pub fn multi_res_spec_l1(y_hat: &Waveform, y: &Waveform, resolutions: &[StftParams]) -> Result<f64> {
    check_lengths(y_hat, y)?;
    if resolutions.is_empty() {
        return Err(Error::Config("at least one STFT resolution is required".into()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let (a, b) = (y_hat.to_f64(), y.to_f64());
    let mut total = 0.0;
    for p in resolutions {
        let (sa, sb) = (stft_f64(&a, p)?, stft_f64(&b, p)?);
        let diff: f64 = sa.bins.iter().zip(&sb.bins).map(|(u, v)| (u.norm() - v.norm()).abs()).sum();
        total += diff / sa.bins.len() as f64;
    }
    Ok(total / resolutions.len() as f64)
}

/// `|d - 2π round(d / 2π)|`, the distance of a phase difference from the
/// nearest whole turn.
pub fn anti_wrap(d: f64) -> f64 {
    (d - 2.0 * PI * (d / (2.0 * PI)).round()).abs()
}

/// The three phase terms, reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTerms {
    pub instantaneous_phase: f64,
    pub group_delay: f64,
    pub instantaneous_frequency: f64,
}

impl PhaseTerms {
    pub fn total(&self) -> f64 {
        self.instantaneous_phase + self.group_delay + self.instantaneous_frequency
    }
}

/// Phase-aware distance between `x_hat` and `y`, weighted by `|Y|`.
///
/// Each term is a weighted mean of anti-wrapped differences, which equals
/// the plain mean with weights `|Y|` normalized to mean 1. Group delay
/// differences run along frequency and instantaneous frequency along time;
/// a difference is weighted by `|Y|` at its lower index. A silent `Y` falls
/// back to uniform weights.
pub fn omni_phase_terms(x_hat: &ComplexSpectrogram, y: &ComplexSpectrogram) -> Result<PhaseTerms> {
    if x_hat.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "phase loss inputs differ: {:?} vs {:?}",
            x_hat.shape(),
            y.shape()
        )));
    }
    let (nf, nt) = (y.n_freq, y.frames);
    let mut w: Vec<f64> = y.bins.iter().map(|z| z.norm()).collect();
    if w.iter().all(|&v| v == 0.0) {
        w.iter_mut().for_each(|v| *v = 1.0);
    }
    let pa: Vec<f64> = x_hat.bins.iter().map(|z| z.arg()).collect();
    let pb: Vec<f64> = y.bins.iter().map(|z| z.arg()).collect();
    let at = |f: usize, t: usize| f * nt + t;

    let weighted = |pairs: &mut dyn Iterator<Item = (usize, f64)>| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, d) in pairs {
            num += w[i] * anti_wrap(d);
            den += w[i];
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let ip = weighted(&mut (0..nf * nt).map(|i| (i, pa[i] - pb[i])));
    let gd = weighted(&mut (0..nf.saturating_sub(1)).flat_map(|f| {
        (0..nt).map(move |t| (at(f, t), at(f + 1, t)))
    }).map(|(i, j)| (i, (pa[j] - pa[i]) - (pb[j] - pb[i]))));
    let iff = weighted(&mut (0..nf).flat_map(|f| {
        (0..nt.saturating_sub(1)).map(move |t| (at(f, t), at(f, t + 1)))
    }).map(|(i, j)| (i, (pa[j] - pa[i]) - (pb[j] - pb[i]))));
    Ok(PhaseTerms {
        instantaneous_phase: ip,
        group_delay: gd,
        instantaneous_frequency: iff,
    })
}

pub fn omni_phase_loss(x_hat: &ComplexSpectrogram, y: &ComplexSpectrogram) -> Result<f64> {
    Ok(omni_phase_terms(x_hat, y)?.total())
}

fn branch_mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Structure("a discriminator branch emitted no scores".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// `1/K Σ_k (E[max(0, 1 - D_k(y))] + E[max(0, 1 + D_k(ŷ))])`, expectations
/// over every score element a branch emits.
pub fn hinge_d_loss(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::BranchCount(real.len(), fake.len()));
    }
    let mut total = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let lr: Vec<f64> = r.iter().map(|s| (1.0 - s).max(0.0)).collect();
        let lf: Vec<f64> = f.iter().map(|s| (1.0 + s).max(0.0)).collect();
        total += branch_mean(&lr)? + branch_mean(&lf)?;
    }
    Ok(total / real.len() as f64)
}

/// `-1/K Σ_k E[D_k(ŷ)]`; zero when there are no branches.
pub fn adv_loss(fake: &[Vec<f64>]) -> f64 {
    if fake.is_empty() {
        return 0.0;
    }
    let sum: f64 = fake
        .iter()
        .map(|f| if f.is_empty() { 0.0 } else { f.iter().sum::<f64>() / f.len() as f64 })
        .sum();
    -sum / fake.len() as f64
}

/// Per-branch score vectors.
pub fn scores(outputs: &[BranchOutput]) -> Vec<Vec<f64>> {
    outputs.iter().map(|o| o.scores.clone()).collect()
}

/// Per-branch feature lists.
pub fn features(outputs: &[BranchOutput]) -> Vec<Vec<FeatureMap>> {
    outputs.iter().map(|o| o.features.clone()).collect()
}

/// `1/K Σ_k 1/L_k Σ_l ‖φ(y) - φ(ŷ)‖₁ / (mean|φ(y)| + ε)`.
pub fn feature_matching(real: &[Vec<FeatureMap>], fake: &[Vec<FeatureMap>]) -> Result<f64> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Structure(format!(
            "{} real branches against {} fake branches",
            real.len(),
            fake.len()
        )));
    }
    let mut total = 0.0;
    for (k, (rb, fb)) in real.iter().zip(fake).enumerate() {
        if rb.len() != fb.len() || rb.is_empty() {
            return Err(Error::Structure(format!(
                "branch {k}: {} real layers against {} fake layers",
                rb.len(),
                fb.len()
            )));
        }
        let mut branch = 0.0;
        for (l, (r, f)) in rb.iter().zip(fb).enumerate() {
            if r.shape() != f.shape() || r.data.len() != f.data.len() || r.data.is_empty() {
                return Err(Error::Structure(format!(
                    "branch {k} layer {l}: shapes {:?} and {:?}",
                    r.shape(),
                    f.shape()
                )));
            }
            let l1: f64 = r.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).sum();
            let mean = r.data.iter().map(|v| v.abs()).sum::<f64>() / r.data.len() as f64;
            branch += l1 / (mean + FM_EPS);
        }
        total += branch / rb.len() as f64;
    }
    Ok(total / real.len() as f64)
}

/// Raw loss terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub wav: f64,
    pub spec: f64,
    pub omni: f64,
    pub adv: f64,
    pub fm: f64,
}

pub fn recon_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.wav * c.wav + w.spec * c.spec + w.omni * c.omni
}

/// `L_recon + λ_adv L_adv + λ_fm L_fm`.
pub fn generator_total(c: &LossComponents, w: &LossWeights) -> f64 {
    recon_loss(c, w) + w.adv * c.adv + w.fm * c.fm
}

/// Scale factor for global gradient-norm clipping.
pub fn grad_clip_scale(global_norm: f64, threshold: f64) -> f64 {
    (threshold / global_norm.max(1e-12)).min(1.0)
}

/// Flat report; discriminator-dependent entries are absent when no
/// discriminator was supplied, and `g_total` then omits them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub wav: f64,
    pub spec: f64,
    pub omni: f64,
    pub recon: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fm: Option<f64>,
    pub g_total: f64,
}

impl LossReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything computable for a restored/clean pair. `phase_grid` is the
/// analysis grid of the phase term (the generator's STFT). With
/// discriminator outputs for both signals, the adversarial terms are filled.
pub fn evaluate(
    restored: &Waveform,
    clean: &Waveform,
    weights: &LossWeights,
    phase_grid: &StftParams,
    disc: Option<(&[BranchOutput], &[BranchOutput])>,
) -> Result<LossReport> {
    weights.validate()?;
    let wav = wav_l1(restored, clean)?;
    let spec = multi_res_spec_l1(restored, clean, &weights.spec_resolutions)?;
    let omni = if clean.is_empty() {
        0.0
    } else {
        omni_phase_loss(&stft_f64(&restored.to_f64(), phase_grid)?, &stft_f64(&clean.to_f64(), phase_grid)?)?
    };
    let mut c = LossComponents { wav, spec, omni, ..Default::default() };
    let (mut d_loss, mut adv, mut fm) = (None, None, None);
    if let Some((real, fake)) = disc {
        let (rs, fs) = (scores(real), scores(fake));
        d_loss = Some(hinge_d_loss(&rs, &fs)?);
        c.adv = adv_loss(&fs);
        c.fm = feature_matching(&features(real), &features(fake))?;
        adv = Some(c.adv);
        fm = Some(c.fm);
    }
    Ok(LossReport {
        wav,
        spec,
        omni,
        recon: recon_loss(&c, weights),
        d_loss,
        adv,
        fm,
        g_total: generator_total(&c, weights),
    })
}
