//! Forward-only multi-branch discriminator: multi-period branches over the
//! folded waveform and multi-resolution branches over STFT magnitudes, every
//! convolution weight spectrally normalized.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::generator::{Manifest, WeightStore};
use crate::nncore::Matrix;
use crate::spectral::{stft_f64, StftParams};

pub const LEAKY_SLOPE: f64 = 0.1;
/// Lower clamp on the estimated largest singular value.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    /// `(n_fft, hop)` pairs.
    pub stft_resolutions: Vec<(usize, usize)>,
    /// Hidden widths of the strided convolutions in each period branch.
    pub period_channels: Vec<usize>,
    /// Hidden widths of the convolutions in each STFT branch.
    pub stft_channels: Vec<usize>,
    /// Number of equal frequency slices fed to extra band branches, computed
    /// at the first STFT resolution; 0 disables them.
    pub multiband_splits: usize,
    /// Power iterations applied per forward pass.
    pub power_iterations: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            stft_resolutions: vec![(2048, 512), (1024, 256), (512, 128)],
            period_channels: vec![16, 32, 64],
            stft_channels: vec![16, 16, 16],
            multiband_splits: 0,
            power_iterations: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &p in &self.periods {
            if p < 2 || !seen.insert(p) {
                return Err(Error::Config(format!("periods must be distinct and at least 2, got {:?}", self.periods)));
            }
        }
        for &(n_fft, hop) in &self.stft_resolutions {
            StftParams::hann(n_fft, hop).validate()?;
        }
        if self.period_channels.is_empty() || self.stft_channels.is_empty() {
            return Err(Error::Config("every branch needs at least one hidden layer".into()));
        }
        if self.period_channels.iter().chain(&self.stft_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.multiband_splits > 0 && self.stft_resolutions.is_empty() {
            return Err(Error::Config("band branches need an STFT resolution".into()));
        }
        if self.multiband_splits > 0 {
            let bins = self.stft_resolutions[0].0 / 2 + 1;
            if self.multiband_splits > bins {
                return Err(Error::Config(format!("{} band slices exceed {bins} bins", self.multiband_splits)));
            }
        }
        if self.power_iterations == 0 {
            return Err(Error::Config("power_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Total branch count K.
    pub fn branch_count(&self) -> usize {
        self.periods.len() + self.stft_resolutions.len() + self.multiband_splits
    }

    /// Shortest waveform the branches accept.
    pub fn min_input_len(&self) -> usize {
        let fold = self.periods.iter().copied().max().unwrap_or(1);
        let window = self.stft_resolutions.iter().map(|r| r.0).max().unwrap_or(1);
        fold.max(window)
    }

    fn branches(&self) -> Vec<BranchSpec> {
        let mut out: Vec<BranchSpec> = self
            .periods
            .iter()
            .map(|&p| BranchSpec {
                name: format!("disc.period.{p}"),
                kind: BranchKind::Period(p),
                layers: period_layers(&self.period_channels),
            })
            .collect();
        for &(n_fft, hop) in &self.stft_resolutions {
            out.push(BranchSpec {
                name: format!("disc.stft.{n_fft}x{hop}"),
                kind: BranchKind::Stft { n_fft, hop, slice: None },
                layers: stft_layers(&self.stft_channels),
            });
        }
        if self.multiband_splits > 0 {
            let (n_fft, hop) = self.stft_resolutions[0];
            let bins = n_fft / 2 + 1;
            let s = self.multiband_splits;
            for b in 0..s {
                let range = (b * bins / s, (b + 1) * bins / s);
                out.push(BranchSpec {
                    name: format!("disc.band.{b}"),
                    kind: BranchKind::Stft { n_fft, hop, slice: Some(range) },
                    layers: stft_layers(&self.stft_channels),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BranchKind {
    Period(usize),
    Stft {
        n_fft: usize,
        hop: usize,
        slice: Option<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    /// Leaky ReLU after the convolution; the output layer has none.
    activate: bool,
}

#[derive(Debug, Clone)]
struct BranchSpec {
    name: String,
    kind: BranchKind,
    layers: Vec<ConvSpec>,
}

fn period_layers(channels: &[usize]) -> Vec<ConvSpec> {
    let mut layers = Vec::new();
    let mut c_in = 1;
    for &c in channels {
        layers.push(ConvSpec { c_in, c_out: c, kernel: (5, 1), stride: (3, 1), pad: (2, 0), activate: true });
        c_in = c;
    }
    layers.push(ConvSpec { c_in, c_out: c_in, kernel: (5, 1), stride: (1, 1), pad: (2, 0), activate: true });
    layers.push(ConvSpec { c_in, c_out: 1, kernel: (3, 1), stride: (1, 1), pad: (1, 0), activate: false });
    layers
}

fn stft_layers(channels: &[usize]) -> Vec<ConvSpec> {
    let mut layers = Vec::new();
    let mut c_in = 1;
    for (i, &c) in channels.iter().enumerate() {
        let stride = if i == 0 { (1, 1) } else { (1, 2) };
        layers.push(ConvSpec { c_in, c_out: c, kernel: (3, 9), stride, pad: (1, 4), activate: true });
        c_in = c;
    }
    layers.push(ConvSpec { c_in, c_out: c_in, kernel: (3, 3), stride: (1, 1), pad: (1, 1), activate: true });
    layers.push(ConvSpec { c_in, c_out: 1, kernel: (3, 3), stride: (1, 1), pad: (1, 1), activate: false });
    layers
}

fn layer_name(branch: &str, l: usize) -> String {
    format!("{branch}.convs.{l}")
}

/// Every discriminator parameter; conv weights are `[c_out, c_in, kh, kw]`.
pub fn manifest(config: &DiscriminatorConfig) -> Result<Manifest> {
    config.validate()?;
    let mut m = Vec::new();
    for b in config.branches() {
        for (l, c) in b.layers.iter().enumerate() {
            let p = layer_name(&b.name, l);
            m.push((format!("{p}.weight"), vec![c.c_out, c.c_in, c.kernel.0, c.kernel.1]));
            m.push((format!("{p}.bias"), vec![c.c_out]));
        }
    }
    Ok(m)
}

pub fn init_weights(config: &DiscriminatorConfig, seed: u64) -> Result<WeightStore> {
    Ok(crate::generator::model::init_from_manifest(&manifest(config)?, seed))
}

/// Persistent power-iteration vectors for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PowerState {
    /// Seeded unit vectors for a `rows x cols` matrix.
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = (0..rows).map(|_| crate::degrade::rng::standard_normal(&mut rng)).collect();
        if !normalize(&mut u) {
            u = vec![1.0 / (rows as f64).sqrt(); rows];
        }
        Self { u, v: vec![0.0; cols] }
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        x.iter_mut().for_each(|v| *v /= n);
        true
    } else {
        false
    }
}

/// Run `iters` power iterations on `state` and return `(W / sigma, sigma)`.
///
/// A zero matrix comes back unchanged: sigma is clamped at [`SIGMA_FLOOR`].
pub fn spectral_normalize(weight: &Matrix, iters: usize, state: &mut PowerState) -> Result<(Matrix, f64)> {
    if iters == 0 {
        return Err(Error::Config("power iteration count must be at least 1".into()));
    }
    if state.u.len() != weight.rows || state.v.len() != weight.cols {
        return Err(Error::Shape(format!(
            "power state is {}/{} for a {}x{} weight",
            state.u.len(),
            state.v.len(),
            weight.rows,
            weight.cols
        )));
    }
    let wt = weight.transpose();
    for _ in 0..iters {
        let mut v = wt.matvec(&state.u);
        if normalize(&mut v) {
            state.v = v;
        }
        let mut u = weight.matvec(&state.v);
        if normalize(&mut u) {
            state.u = u;
        }
    }
    let wv = weight.matvec(&state.v);
    let sigma = state.u.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>().abs().max(SIGMA_FLOOR);
    if weight.data.iter().all(|&w| w == 0.0) {
        return Ok((weight.clone(), sigma));
    }
    Ok((weight.scale(1.0 / sigma), sigma))
}

/// Power-iteration state for every conv weight, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscriminatorState {
    pub vectors: BTreeMap<String, PowerState>,
}

/// `channels x height x width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    /// Every element of the final score map.
    pub scores: Vec<f64>,
    /// Activations of each layer, the score map last.
    pub features: Vec<FeatureMap>,
}

impl BranchOutput {
    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    /// `c_out x (c_in kh kw)` before normalization.
    weight: Matrix,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    branches: Vec<(BranchSpec, Vec<ConvLayer>)>,
}

/// Iterations used to converge freshly created power-iteration state.
const WARMUP_MAX_ITERS: usize = 1000;
const WARMUP_TOL: f64 = 1e-12;

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, store: &WeightStore) -> Result<Self> {
        store.validate(&manifest(&config)?)?;
        let branches = config
            .branches()
            .into_iter()
            .map(|b| {
                let layers = b
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(l, &spec)| {
                        let p = layer_name(&b.name, l);
                        let w = store.get(&format!("{p}.weight"))?;
                        let cols = spec.c_in * spec.kernel.0 * spec.kernel.1;
                        Ok(ConvLayer {
                            spec,
                            weight: Matrix::from_vec(spec.c_out, cols, w.data.iter().map(|&v| v as f64).collect())?,
                            bias: store.vector(&format!("{p}.bias"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((b, layers))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, branches })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Power-iteration state converged on the current weights, so that the
    /// single iteration of each forward pass starts from an accurate estimate.
    pub fn new_state(&self, seed: u64) -> DiscriminatorState {
        let mut vectors = BTreeMap::new();
        for (bi, (b, layers)) in self.branches.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                let mut st = PowerState::new(layer.weight.rows, layer.weight.cols, seed ^ ((bi as u64) << 32 | l as u64));
                let mut prev = 0.0;
                for _ in 0..WARMUP_MAX_ITERS {
                    let (_, sigma) = spectral_normalize(&layer.weight, 1, &mut st).expect("state sized to weight");
                    if (sigma - prev).abs() <= WARMUP_TOL * sigma {
                        break;
                    }
                    prev = sigma;
                }
                vectors.insert(format!("{}.weight", layer_name(&b.name, l)), st);
            }
        }
        DiscriminatorState { vectors }
    }

    /// Spectrally normalized weights after advancing `state`.
    fn normalized(&self, state: &mut DiscriminatorState) -> Result<Vec<Vec<Matrix>>> {
        self.branches
            .iter()
            .map(|(b, layers)| {
                layers
                    .iter()
                    .enumerate()
                    .map(|(l, layer)| {
                        let key = format!("{}.weight", layer_name(&b.name, l));
                        let st = state
                            .vectors
                            .entry(key)
                            .or_insert_with(|| PowerState::new(layer.weight.rows, layer.weight.cols, 0));
                        Ok(spectral_normalize(&layer.weight, self.config.power_iterations, st)?.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// One [`BranchOutput`] per branch: periods first, then STFT resolutions,
    /// then band slices.
    pub fn forward(&self, wave: &Waveform, state: &mut DiscriminatorState) -> Result<Vec<BranchOutput>> {
        let need = self.config.min_input_len();
        if wave.len() < need {
            return Err(Error::InputTooShort { need, got: wave.len() });
        }
        let weights = self.normalized(state)?;
        let signal = wave.to_f64();
        self.branches
            .par_iter()
            .zip(weights.par_iter())
            .map(|((b, layers), ws)| {
                let mut x = branch_input(&signal, b.kind)?;
                let mut features = Vec::with_capacity(layers.len());
                for (layer, w) in layers.iter().zip(ws) {
                    x = conv2d(&x, w, &layer.bias, &layer.spec);
                    if layer.spec.activate {
                        x.data.iter_mut().for_each(|v| {
                            if *v < 0.0 {
                                *v *= LEAKY_SLOPE
                            }
                        });
                    }
                    features.push(x.clone());
                }
                Ok(BranchOutput { scores: x.data, features })
            })
            .collect()
    }
}

fn branch_input(signal: &[f64], kind: BranchKind) -> Result<FeatureMap> {
    match kind {
        BranchKind::Period(p) => {
            // reflect-pad to a whole number of periods, then rows are time
            let rows = signal.len().div_ceil(p);
            let n = signal.len();
            let data = (0..rows * p)
                .map(|i| if i < n { signal[i] } else { signal[2 * (n - 1) - i] })
                .collect();
            Ok(FeatureMap { channels: 1, height: rows, width: p, data })
        }
        BranchKind::Stft { n_fft, hop, slice } => {
            let spec = stft_f64(signal, &StftParams::hann(n_fft, hop))?;
            let (lo, hi) = slice.unwrap_or((0, spec.n_freq));
            let (frames, width) = (spec.frames, hi - lo);
            let mut data = vec![0.0; frames * width];
            for (k, f) in (lo..hi).enumerate() {
                for (t, z) in spec.row(f).iter().enumerate() {
                    data[t * width + k] = z.norm();
                }
            }
            Ok(FeatureMap { channels: 1, height: frames, width, data })
        }
    }
}

/// Zero-padded strided 2-D correlation via im2col.
fn conv2d(x: &FeatureMap, w: &Matrix, bias: &[f64], s: &ConvSpec) -> FeatureMap {
    let (kh, kw) = s.kernel;
    let h_out = (x.height + 2 * s.pad.0 - kh) / s.stride.0 + 1;
    let w_out = (x.width + 2 * s.pad.1 - kw) / s.stride.1 + 1;
    let positions = h_out * w_out;
    let mut cols = Matrix::zeros(s.c_in * kh * kw, positions);
    for c in 0..s.c_in {
        let plane = &x.data[c * x.height * x.width..(c + 1) * x.height * x.width];
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let dst = &mut cols.data[row * positions..(row + 1) * positions];
                for oy in 0..h_out {
                    let y = (oy * s.stride.0 + i) as isize - s.pad.0 as isize;
                    if y < 0 || y >= x.height as isize {
                        continue;
                    }
                    let src = &plane[y as usize * x.width..(y as usize + 1) * x.width];
                    for ox in 0..w_out {
                        let xx = (ox * s.stride.1 + j) as isize - s.pad.1 as isize;
                        if xx >= 0 && xx < x.width as isize {
                            dst[oy * w_out + ox] = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    let mut out = w.matmul(&cols).expect("conv weight matches im2col rows");
    for (row, b) in out.data.chunks_exact_mut(positions.max(1)).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    FeatureMap { channels: s.c_out, height: h_out, width: w_out, data: out.data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::Param;
    use rand::Rng;

    fn sigma_max(m: &Matrix) -> f64 {
        let n = nalgebra::DMatrix::from_row_slice(m.rows, m.cols, &m.data);
        n.singular_values().max()
    }

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            periods: vec![2, 3],
            stft_resolutions: vec![(256, 64), (128, 32)],
            period_channels: vec![4, 8],
            stft_channels: vec![4, 4],
            ..DiscriminatorConfig::default()
        }
    }

    #[test]
    fn identity_and_diagonal() {
        let mut st = PowerState::new(3, 3, 1);
        let (w, s) = spectral_normalize(&Matrix::identity(3), 5, &mut st).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(w.data.iter().zip(&Matrix::identity(3).data).all(|(a, b)| (a - b).abs() < 1e-12));

        let d = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = PowerState::new(2, 2, 2);
        let (w, _) = spectral_normalize(&d, 20, &mut st).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 0.01);
        assert!((w.get(1, 1) - 1.0 / 3.0).abs() < 0.01 / 3.0);
    }

    #[test]
    fn zero_matrix_unchanged() {
        let z = Matrix::zeros(4, 3);
        let mut st = PowerState::new(4, 3, 0);
        let (w, s) = spectral_normalize(&z, 3, &mut st).unwrap();
        assert_eq!(w, z);
        assert_eq!(s, SIGMA_FLOOR);
        assert!(spectral_normalize(&z, 0, &mut st).is_err());
    }

    #[test]
    fn random_matrix_against_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..10 {
            let m = Matrix::from_vec(16, 16, (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut st = PowerState::new(16, 16, trial);
            let (w, s) = spectral_normalize(&m, 200, &mut st).unwrap();
            assert!((s / sigma_max(&m) - 1.0).abs() < 0.01);
            assert!((sigma_max(&w) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn branch_count_and_min_length() {
        let cfg = DiscriminatorConfig::default();
        assert_eq!(cfg.branch_count(), 8);
        assert_eq!(cfg.min_input_len(), 2048);
        let d = Discriminator::new(cfg.clone(), &init_weights(&cfg, 1).unwrap()).unwrap();
        let mut st = d.new_state(0);
        let short = Waveform::new(vec![0.1; 1000], 48000).unwrap();
        assert!(matches!(d.forward(&short, &mut st), Err(Error::InputTooShort { need: 2048, got: 1000 })));
        let wave = Waveform::new((0..24000).map(|i| (i as f32 * 0.01).sin() * 0.3).collect(), 48000).unwrap();
        let out = d.forward(&wave, &mut st).unwrap();
        assert_eq!(out.len(), 8);
        for b in &out {
            assert!(!b.features.is_empty());
            assert!(b.features.iter().all(|f| f.data.iter().all(|v| v.is_finite())));
            assert_eq!(b.scores, b.features.last().unwrap().data);
        }
    }

    #[test]
    fn zero_input_zero_biases_give_zero() {
        let cfg = small();
        let d = Discriminator::new(cfg.clone(), &init_weights(&cfg, 2).unwrap()).unwrap();
        let mut st = d.new_state(1);
        let out = d.forward(&Waveform::new(vec![0.0; 1000], 16000).unwrap(), &mut st).unwrap();
        assert_eq!(out.len(), 4);
        for b in out {
            assert!(b.scores.iter().all(|&s| s == 0.0));
            assert!(b.features.iter().all(|f| f.data.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn deterministic_and_normalized() {
        let cfg = DiscriminatorConfig { multiband_splits: 2, ..small() };
        let store = init_weights(&cfg, 3).unwrap();
        let d = Discriminator::new(cfg.clone(), &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wave = Waveform::new((0..3000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000).unwrap();
        let (mut s1, mut s2) = (d.new_state(7), d.new_state(7));
        let a = d.forward(&wave, &mut s1).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, d.forward(&wave, &mut s2).unwrap());
        for w in d.normalized(&mut s1).unwrap().iter().flatten() {
            assert!(sigma_max(w) <= 1.01, "sigma {}", sigma_max(w));
        }
    }

    #[test]
    fn period_fold_layout() {
        let x = branch_input(&[0.0, 1.0, 2.0, 3.0, 4.0], BranchKind::Period(3)).unwrap();
        assert_eq!((x.height, x.width), (2, 3));
        assert_eq!(x.data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 3.0]);
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let spec = ConvSpec { c_in: 2, c_out: 3, kernel: (3, 2), stride: (2, 1), pad: (1, 0), activate: false };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = FeatureMap { channels: 2, height: 7, width: 4, data: (0..56).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let w = Matrix::from_vec(3, 12, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let bias = vec![0.5, -0.25, 0.0];
        let y = conv2d(&x, &w, &bias, &spec);
        assert_eq!(y.shape(), (3, 4, 3));
        for o in 0..3 {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut acc = bias[o];
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..2 {
                                let yy = (oy * 2 + i) as isize - 1;
                                let xx = ox + j;
                                if yy >= 0 && (yy as usize) < 7 {
                                    acc += w.get(o, (c * 3 + i) * 2 + j) * x.data[c * 28 + yy as usize * 4 + xx];
                                }
                            }
                        }
                    }
                    assert!((acc - y.data[(o * 4 + oy) * 3 + ox]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(DiscriminatorConfig { periods: vec![2, 2], ..small() }.validate().is_err());
        assert!(DiscriminatorConfig { periods: vec![1], ..small() }.validate().is_err());
        assert!(DiscriminatorConfig { stft_resolutions: vec![(100, 200)], ..small() }.validate().is_err());
        let cfg = small();
        let mut store = init_weights(&cfg, 1).unwrap();
        store.insert("disc.extra", Param::filled(vec![1], 0.0));
        assert!(matches!(Discriminator::new(cfg, &store), Err(Error::Manifest(_))));
    }
}
