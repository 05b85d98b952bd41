use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::rng::{self, index, pink_noise, uniform};
use super::stages::{self, ClipCurve, GainCurve};
use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::generator::config::parse_key_values;

/// Closed interval `lo..hi` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("invalid range {lo}..{hi}")));
        }
        Ok(Self { lo, hi })
    }

    fn sample(&self, rng: &mut rng::DegradeRng) -> f64 {
        uniform(rng, self.lo, self.hi)
    }

    fn within(&self, lo: f64, hi: f64, what: &str) -> Result<()> {
        if self.lo < lo || self.hi > hi {
            return Err(Error::Config(format!("{what} range {self} must lie within [{lo}, {hi}]")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Range {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl FromStr for Range {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected lo..hi, got {s:?}"));
        let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
        Range::new(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)
    }
}

/// Parameter ranges of one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum StageKind {
    /// Random gains at `points` log-spaced frequencies from 60 Hz up to a
    /// sampled lowpass cutoff, then -60 dB from 1.1 times the cutoff on.
    FreqShape { gain_db: Range, lowpass_hz: Range, points: usize },
    Reverb { rt60: Range, wet: Range },
    Clip { drive: Range, curves: Vec<ClipCurve> },
    Noise { snr_db: Range },
    SpectralCorrupt { mask_fraction: Range, phase_std: Range },
    Gain { cutoff_hz: Range, depth: Range },
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::FreqShape { .. } => "freq_shape",
            StageKind::Reverb { .. } => "reverb",
            StageKind::Clip { .. } => "clip",
            StageKind::Noise { .. } => "noise",
            StageKind::SpectralCorrupt { .. } => "spectral_corrupt",
            StageKind::Gain { .. } => "gain",
        }
    }

    fn default_for(name: &str) -> Result<Self> {
        let r = |lo, hi| Range { lo, hi };
        Ok(match name {
            "freq_shape" => StageKind::FreqShape {
                gain_db: r(-24.0, 6.0),
                lowpass_hz: r(2000.0, 20000.0),
                points: 6,
            },
            "reverb" => StageKind::Reverb { rt60: r(0.2, 1.5), wet: r(0.1, 0.6) },
            "clip" => StageKind::Clip { drive: r(1.0, 8.0), curves: ClipCurve::ALL.to_vec() },
            "noise" => StageKind::Noise { snr_db: r(-5.0, 30.0) },
            "spectral_corrupt" => StageKind::SpectralCorrupt {
                mask_fraction: r(0.0, 0.3),
                phase_std: r(0.0, 0.8),
            },
            "gain" => StageKind::Gain { cutoff_hz: r(0.5, 20.0), depth: r(0.0, 0.5) },
            other => return Err(Error::Parse(format!("unknown stage {other:?}"))),
        })
    }

    fn validate(&self) -> Result<()> {
        match self {
            StageKind::FreqShape { gain_db, lowpass_hz, points } => {
                gain_db.within(stages::MIN_GAIN_DB, stages::MAX_GAIN_DB, "gain_db")?;
                if lowpass_hz.lo <= 60.0 {
                    return Err(Error::Config("lowpass_hz must stay above 60 Hz".into()));
                }
                if *points < 2 {
                    return Err(Error::Config("freq_shape needs at least 2 points".into()));
                }
            }
            StageKind::Reverb { rt60, wet } => {
                rt60.within(0.1, 3.0, "rt60")?;
                wet.within(0.0, 1.0, "wet")?;
            }
            StageKind::Clip { drive, curves } => {
                drive.within(1.0, f64::MAX, "drive")?;
                if curves.is_empty() {
                    return Err(Error::Config("clip needs at least one curve".into()));
                }
            }
            StageKind::Noise { .. } => {}
            StageKind::SpectralCorrupt { mask_fraction, phase_std } => {
                mask_fraction.within(0.0, 1.0, "mask_fraction")?;
                phase_std.within(0.0, f64::MAX, "phase_std")?;
            }
            StageKind::Gain { cutoff_hz, depth } => {
                if cutoff_hz.lo <= 0.0 || cutoff_hz.hi > 20.0 {
                    return Err(Error::Config(format!("gain cutoff range {cutoff_hz} must lie in (0, 20]")));
                }
                depth.within(0.0, 1.0, "depth")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub probability: f64,
    pub kind: StageKind,
}

/// Ordered stages plus the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub seed: u64,
    pub stages: Vec<StageConfig>,
}

pub const DEFAULT_ORDER: [&str; 6] = ["freq_shape", "reverb", "clip", "noise", "spectral_corrupt", "gain"];
pub const DEFAULT_PROBABILITY: f64 = 0.5;

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: DEFAULT_ORDER
                .iter()
                .map(|n| StageConfig {
                    probability: DEFAULT_PROBABILITY,
                    kind: StageKind::default_for(n).expect("known stage"),
                })
                .collect(),
        }
    }
}

impl DegradationSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same stages with every probability replaced by `p`.
    pub fn with_probability(mut self, p: f64) -> Self {
        self.stages.iter_mut().for_each(|s| s.probability = p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::Config(format!(
                    "{} probability {} outside [0, 1]",
                    s.kind.name(),
                    s.probability
                )));
            }
            s.kind.validate()?;
        }
        Ok(())
    }

    /// `key = value` text; ranges are written `lo..hi`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let order: Vec<&str> = self.stages.iter().map(|s| s.kind.name()).collect();
        let _ = writeln!(s, "order = {}", order.join(", "));
        for st in &self.stages {
            let n = st.kind.name();
            let _ = writeln!(s, "{n}.p = {}", st.probability);
            match &st.kind {
                StageKind::FreqShape { gain_db, lowpass_hz, points } => {
                    let _ = writeln!(s, "{n}.gain_db = {gain_db}");
                    let _ = writeln!(s, "{n}.lowpass_hz = {lowpass_hz}");
                    let _ = writeln!(s, "{n}.points = {points}");
                }
                StageKind::Reverb { rt60, wet } => {
                    let _ = writeln!(s, "{n}.rt60 = {rt60}");
                    let _ = writeln!(s, "{n}.wet = {wet}");
                }
                StageKind::Clip { drive, curves } => {
                    let names: Vec<&str> = curves.iter().map(|c| c.name()).collect();
                    let _ = writeln!(s, "{n}.drive = {drive}");
                    let _ = writeln!(s, "{n}.curves = {}", names.join(", "));
                }
                StageKind::Noise { snr_db } => {
                    let _ = writeln!(s, "{n}.snr_db = {snr_db}");
                }
                StageKind::SpectralCorrupt { mask_fraction, phase_std } => {
                    let _ = writeln!(s, "{n}.mask_fraction = {mask_fraction}");
                    let _ = writeln!(s, "{n}.phase_std = {phase_std}");
                }
                StageKind::Gain { cutoff_hz, depth } => {
                    let _ = writeln!(s, "{n}.cutoff_hz = {cutoff_hz}");
                    let _ = writeln!(s, "{n}.depth = {depth}");
                }
            }
        }
        s
    }

    /// Parse the text form. Stages listed in `order` start from their
    /// defaults; any `stage.key` line overrides one field.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let seed = match kv.get("seed") {
            Some(v) => v.parse().map_err(|_| Error::Parse(format!("invalid seed {v:?}")))?,
            None => 0,
        };
        let order: Vec<String> = match kv.get("order") {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => DEFAULT_ORDER.iter().map(|s| s.to_string()).collect(),
        };
        let mut stages = Vec::with_capacity(order.len());
        for name in &order {
            let kind = StageKind::default_for(name)?;
            stages.push(StageConfig { probability: DEFAULT_PROBABILITY, kind });
        }
        for (key, value) in &kv {
            if key == "seed" || key == "order" {
                continue;
            }
            let (stage, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Parse(format!("unknown key {key:?}")))?;
            let st = stages
                .iter_mut()
                .find(|s| s.kind.name() == stage)
                .ok_or_else(|| Error::Parse(format!("{key:?} names a stage missing from order")))?;
            let range = || value.parse::<Range>();
            let unknown = || Error::Parse(format!("unknown key {key:?}"));
            if field == "p" {
                st.probability = value.parse().map_err(|_| Error::Parse(format!("invalid probability {value:?}")))?;
                continue;
            }
            match (&mut st.kind, field) {
                (StageKind::FreqShape { gain_db, .. }, "gain_db") => *gain_db = range()?,
                (StageKind::FreqShape { lowpass_hz, .. }, "lowpass_hz") => *lowpass_hz = range()?,
                (StageKind::FreqShape { points, .. }, "points") => {
                    *points = value.parse().map_err(|_| Error::Parse(format!("invalid points {value:?}")))?
                }
                (StageKind::Reverb { rt60, .. }, "rt60") => *rt60 = range()?,
                (StageKind::Reverb { wet, .. }, "wet") => *wet = range()?,
                (StageKind::Clip { drive, .. }, "drive") => *drive = range()?,
                (StageKind::Clip { curves, .. }, "curves") => {
                    *curves = value
                        .split(',')
                        .map(|c| c.trim().parse())
                        .collect::<Result<Vec<ClipCurve>>>()?
                }
                (StageKind::Noise { snr_db }, "snr_db") => *snr_db = range()?,
                (StageKind::SpectralCorrupt { mask_fraction, .. }, "mask_fraction") => *mask_fraction = range()?,
                (StageKind::SpectralCorrupt { phase_std, .. }, "phase_std") => *phase_std = range()?,
                (StageKind::Gain { cutoff_hz, .. }, "cutoff_hz") => *cutoff_hz = range()?,
                (StageKind::Gain { depth, .. }, "depth") => *depth = range()?,
                _ => return Err(unknown()),
            }
        }
        let spec = Self { seed, stages };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum NoiseSource {
    /// Entry `index` of the caller's noise pool, read from `offset`.
    Pool { index: usize, offset: usize },
    /// Built-in pink noise generated from `seed`.
    Pink { seed: u64 },
}

/// Parameters one stage actually applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum AppliedStage {
    FreqShape { curve: GainCurve },
    Reverb { rt60: f64, wet: f64, seed: u64 },
    Clip { curve: ClipCurve, drive: f64 },
    Noise { snr_db: f64, #[serde(flatten)] noise: NoiseSource },
    SpectralCorrupt { window: usize, hop: usize, mask_fraction: f64, phase_std: f64, seed: u64 },
    Gain { cutoff_hz: f64, depth: f64, seed: u64 },
}

/// Applied stages in order; disabled stages leave no entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTrace {
    pub stages: Vec<AppliedStage>,
}

impl StageTrace {
    /// One JSON object per line, one line per applied stage.
    pub fn to_json_lines(&self) -> String {
        self.stages
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace serializes") + "\n")
            .collect()
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let stages = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(format!("bad trace line: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages })
    }
}

/// Draw the parameters of every enabled stage. Stage `i` uses stream `i` of
/// the master seed: first the enable draw, then its parameters.
pub fn sample_trace(spec: &DegradationSpec, sample_rate: u32, len: usize, noise_pool: &[Vec<f64>]) -> Result<StageTrace> {
    spec.validate()?;
    let mut stages = Vec::new();
    for (i, st) in spec.stages.iter().enumerate() {
        let mut r = rng::stream(spec.seed, i as u64);
        if rng::unit(&mut r) >= st.probability {
            continue;
        }
        let applied = match &st.kind {
            StageKind::FreqShape { gain_db, lowpass_hz, points } => {
                let nyquist = sample_rate as f64 / 2.0;
                let cutoff = lowpass_hz.sample(&mut r).min(nyquist / 1.1);
                let lo: f64 = 60.0;
                let mut pts: Vec<(f64, f64)> = (0..*points)
                    .map(|k| {
                        let hz = lo * (cutoff / lo).powf(k as f64 / (*points - 1) as f64);
                        (hz, gain_db.sample(&mut r))
                    })
                    .collect();
                pts.push((cutoff * 1.1, stages::MIN_GAIN_DB));
                AppliedStage::FreqShape { curve: GainCurve::new(pts)? }
            }
            StageKind::Reverb { rt60, wet } => AppliedStage::Reverb {
                rt60: rt60.sample(&mut r),
                wet: wet.sample(&mut r),
                seed: r.next_u64(),
            },
            StageKind::Clip { drive, curves } => AppliedStage::Clip {
                curve: curves[index(&mut r, curves.len())],
                drive: drive.sample(&mut r),
            },
            StageKind::Noise { snr_db } => {
                let snr = snr_db.sample(&mut r);
                let noise = if noise_pool.is_empty() {
                    NoiseSource::Pink { seed: r.next_u64() }
                } else {
                    let idx = index(&mut r, noise_pool.len());
                    let n = noise_pool[idx].len();
                    if n == 0 {
                        return Err(Error::SilentInput(format!("noise pool entry {idx} is empty")));
                    }
                    // a crop start when the noise is longer, else a loop phase
                    let span = if n > len { n - len + 1 } else { n };
                    NoiseSource::Pool { index: idx, offset: index(&mut r, span) }
                };
                AppliedStage::Noise { snr_db: snr, noise }
            }
            StageKind::SpectralCorrupt { mask_fraction, phase_std } => {
                let grids = stages::corrupt_grids();
                let (window, hop) = grids[index(&mut r, grids.len())];
                AppliedStage::SpectralCorrupt {
                    window,
                    hop,
                    mask_fraction: mask_fraction.sample(&mut r),
                    phase_std: phase_std.sample(&mut r),
                    seed: r.next_u64(),
                }
            }
            StageKind::Gain { cutoff_hz, depth } => AppliedStage::Gain {
                cutoff_hz: cutoff_hz.sample(&mut r),
                depth: depth.sample(&mut r),
                seed: r.next_u64(),
            },
        };
        stages.push(applied);
    }
    Ok(StageTrace { stages })
}

/// Apply one recorded stage.
pub fn apply_stage(wave: &Waveform, stage: &AppliedStage, noise_pool: &[Vec<f64>]) -> Result<Waveform> {
    match stage {
        AppliedStage::FreqShape { curve } => stages::freq_shape(wave, curve),
        AppliedStage::Reverb { rt60, wet, seed } => stages::reverb(wave, *rt60, *wet, *seed),
        AppliedStage::Clip { curve, drive } => stages::clip(wave, *curve, *drive),
        AppliedStage::Noise { snr_db, noise } => match noise {
            NoiseSource::Pink { seed } => stages::add_noise(wave, &pink_noise(wave.len(), *seed), 0, *snr_db),
            NoiseSource::Pool { index, offset } => {
                let n = noise_pool.get(*index).ok_or_else(|| {
                    Error::Config(format!("trace uses noise {index} but the pool has {}", noise_pool.len()))
                })?;
                stages::add_noise(wave, n, *offset, *snr_db)
            }
        },
        AppliedStage::SpectralCorrupt { window, hop, mask_fraction, phase_std, seed } => {
            stages::spectral_corrupt(wave, *window, *hop, *mask_fraction, *phase_std, *seed)
        }
        AppliedStage::Gain { cutoff_hz, depth, seed } => stages::time_varying_gain(wave, *cutoff_hz, *depth, *seed),
    }
}

/// Re-apply a trace exactly, regardless of stage probabilities.
pub fn replay(wave: &Waveform, trace: &StageTrace, noise_pool: &[Vec<f64>]) -> Result<Waveform> {
    trace
        .stages
        .iter()
        .try_fold(wave.clone(), |w, s| apply_stage(&w, s, noise_pool))
}

/// Sample a trace from `spec` and apply it.
pub fn apply_chain(wave: &Waveform, spec: &DegradationSpec, noise_pool: &[Vec<f64>]) -> Result<(Waveform, StageTrace)> {
    let trace = sample_trace(spec, wave.sample_rate, wave.len(), noise_pool)?;
    let out = replay(wave, &trace, noise_pool)?;
    Ok((out, trace))
}

/// Seed for the `index`-th file of a corpus run under `seed`.
pub fn file_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, (1u64 << 32) | index).next_u64()
}
