use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::config::{BlockMode, ModelConfig, TemporalWeights};
use super::weights::{Manifest, Param, WeightStore};
use crate::audio_io::Waveform;
use crate::bandsplit::{mel_band_layout, pack_band_features, reassemble, BandLayout, BandSpectrum, PackedBandFeatures};
use crate::error::{Error, Result};
use crate::nncore::{
    depthwise_conv1d, glu, layer_scale, multi_head_attention, pointwise_conv, pointwise_group, rmsnorm,
    rmsnorm_group, silu, swiglu, AttentionWeights, Linear, Matrix, RopeTable, Tensor3, ROPE_BASE,
};
use crate::spectral::{istft_f64, stft, ComplexSpectrogram};

/// Number of ConvNeXt blocks per temporal stack, dilations `{1, d, 1}`.
pub const TEMPORAL_DEPTH: usize = 3;
/// Initial layer-scale value.
pub const LAYER_SCALE_INIT: f32 = 1e-6;

fn temporal_prefix(config: &ModelConfig, layer: usize, band: usize, j: usize) -> String {
    match config.temporal_weights {
        TemporalWeights::Shared => format!("blocks.{layer}.temporal.{j}"),
        TemporalWeights::PerBand => format!("blocks.{layer}.temporal.band{band}.{j}"),
    }
}

/// Every parameter name and shape implied by `config`, in construction order.
pub fn manifest(config: &ModelConfig) -> Result<Manifest> {
    config.validate()?;
    let layout = mel_band_layout(config.n_freq(), config.n_band, config.sample_rate)?;
    let n = config.features;
    let hidden = config.ff_expansion * n;
    let mut m: Manifest = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| m.push((name, shape));

    for (i, &bw) in layout.widths().iter().enumerate() {
        let c = 2 * bw + 1;
        push(format!("stem.{i}.norm.gain"), vec![c]);
        push(format!("stem.{i}.proj.weight"), vec![n, c]);
        push(format!("stem.{i}.proj.bias"), vec![n]);
    }
    for l in 0..config.layers {
        push(format!("blocks.{l}.attn.norm.gain"), vec![n]);
        for p in ["q", "k", "v", "out"] {
            push(format!("blocks.{l}.attn.{p}.weight"), vec![n, n]);
            push(format!("blocks.{l}.attn.{p}.bias"), vec![n]);
        }
        push(format!("blocks.{l}.ffn.norm.gain"), vec![n]);
        push(format!("blocks.{l}.ffn.w_in.weight"), vec![hidden, n]);
        push(format!("blocks.{l}.ffn.w_gate.weight"), vec![hidden, n]);
        push(format!("blocks.{l}.ffn.w_out.weight"), vec![n, hidden]);
        let stacks = match config.temporal_weights {
            TemporalWeights::Shared => 1,
            TemporalWeights::PerBand => config.n_band,
        };
        for band in 0..stacks {
            for j in 0..TEMPORAL_DEPTH {
                let p = temporal_prefix(config, l, band, j);
                push(format!("{p}.dw.weight"), vec![n, config.conv_kernel]);
                push(format!("{p}.dw.bias"), vec![n]);
                push(format!("{p}.norm.gain"), vec![n]);
                push(format!("{p}.pw_in.weight"), vec![2 * hidden, n]);
                push(format!("{p}.pw_in.bias"), vec![2 * hidden]);
                push(format!("{p}.pw_out.weight"), vec![n, hidden]);
                push(format!("{p}.pw_out.bias"), vec![n]);
                push(format!("{p}.gamma"), vec![n]);
            }
        }
    }
    for (i, &bw) in layout.widths().iter().enumerate() {
        push(format!("heads.{i}.norm.gain"), vec![n]);
        push(format!("heads.{i}.pw1.weight"), vec![n, n]);
        push(format!("heads.{i}.pw1.bias"), vec![n]);
        push(format!("heads.{i}.pw2.weight"), vec![4 * bw, n]);
        push(format!("heads.{i}.pw2.bias"), vec![4 * bw]);
    }
    Ok(m)
}

/// Deterministic initialization: matrices uniform in `±sqrt(1 / fan_in)`,
/// norm gains 1, biases 0, layer scales `1e-6`.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    Ok(init_from_manifest(&manifest(config)?, seed))
}

pub(crate) fn init_from_manifest(manifest: &Manifest, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (name, shape) in manifest {
        let param = if name.ends_with(".gain") {
            Param::filled(shape.clone(), 1.0)
        } else if name.ends_with(".bias") {
            Param::filled(shape.clone(), 0.0)
        } else if name.ends_with(".gamma") {
            Param::filled(shape.clone(), LAYER_SCALE_INIT)
        } else {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| rng.random_range(-bound..=bound) as f32)
                .collect();
            Param { shape: shape.clone(), data }
        };
        store.insert(name.clone(), param);
    }
    store
}

#[derive(Debug, Clone)]
struct StemWeights {
    norm: Vec<f64>,
    proj: Linear,
}

#[derive(Debug, Clone)]
struct ConvNextWeights {
    dw: Matrix,
    dw_bias: Vec<f64>,
    norm: Vec<f64>,
    pw_in: Linear,
    pw_out: Linear,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockWeights {
    attn_norm: Vec<f64>,
    attn: AttentionWeights,
    ffn_norm: Vec<f64>,
    w_in: Matrix,
    w_gate: Matrix,
    w_out: Matrix,
    /// One stack when shared, else one per band.
    temporal: Vec<Vec<ConvNextWeights>>,
}

#[derive(Debug, Clone)]
struct HeadWeights {
    norm: Vec<f64>,
    pw1: Linear,
    pw2: Linear,
}

/// The band-split generator, immutable once built.
#[derive(Debug, Clone)]
pub struct Generator {
    config: ModelConfig,
    layout: BandLayout,
    stems: Vec<StemWeights>,
    blocks: Vec<BlockWeights>,
    heads: Vec<HeadWeights>,
    rope: RopeTable,
}

impl Generator {
    pub fn new(config: ModelConfig, store: &WeightStore) -> Result<Self> {
        store.validate(&manifest(&config)?)?;
        let layout = mel_band_layout(config.n_freq(), config.n_band, config.sample_rate)?;
        let stems = (0..config.n_band)
            .map(|i| {
                Ok(StemWeights {
                    norm: store.vector(&format!("stem.{i}.norm.gain"))?,
                    proj: store.linear(&format!("stem.{i}.proj"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..config.layers)
            .map(|l| {
                let stacks = match config.temporal_weights {
                    TemporalWeights::Shared => 1,
                    TemporalWeights::PerBand => config.n_band,
                };
                let temporal = (0..stacks)
                    .map(|band| {
                        (0..TEMPORAL_DEPTH)
                            .map(|j| {
                                let p = temporal_prefix(&config, l, band, j);
                                Ok(ConvNextWeights {
                                    dw: store.matrix(&format!("{p}.dw.weight"))?,
                                    dw_bias: store.vector(&format!("{p}.dw.bias"))?,
                                    norm: store.vector(&format!("{p}.norm.gain"))?,
                                    pw_in: store.linear(&format!("{p}.pw_in"))?,
                                    pw_out: store.linear(&format!("{p}.pw_out"))?,
                                    gamma: store.vector(&format!("{p}.gamma"))?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BlockWeights {
                    attn_norm: store.vector(&format!("blocks.{l}.attn.norm.gain"))?,
                    attn: AttentionWeights {
                        q: store.linear(&format!("blocks.{l}.attn.q"))?,
                        k: store.linear(&format!("blocks.{l}.attn.k"))?,
                        v: store.linear(&format!("blocks.{l}.attn.v"))?,
                        out: store.linear(&format!("blocks.{l}.attn.out"))?,
                    },
                    ffn_norm: store.vector(&format!("blocks.{l}.ffn.norm.gain"))?,
                    w_in: store.matrix(&format!("blocks.{l}.ffn.w_in.weight"))?,
                    w_gate: store.matrix(&format!("blocks.{l}.ffn.w_gate.weight"))?,
                    w_out: store.matrix(&format!("blocks.{l}.ffn.w_out.weight"))?,
                    temporal,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = layout
            .widths()
            .iter()
            .enumerate()
            .map(|(i, &bw)| {
                let pw2 = store.linear(&format!("heads.{i}.pw2"))?;
                if pw2.out_dim() != 4 * bw {
                    return Err(Error::Shape(format!(
                        "head {i} pre-GLU projection emits {} channels, band width {bw} needs {}",
                        pw2.out_dim(),
                        4 * bw
                    )));
                }
                Ok(HeadWeights {
                    norm: store.vector(&format!("heads.{i}.norm.gain"))?,
                    pw1: store.linear(&format!("heads.{i}.pw1"))?,
                    pw2,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rope = RopeTable::new(config.n_band, config.head_dim(), ROPE_BASE)?;
        Ok(Self {
            config,
            layout,
            stems,
            blocks,
            heads,
            rope,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    /// Per-band RMSNorm and projection to the shared width: `(n_band, N, T)`.
    pub fn stem(&self, packed: &PackedBandFeatures) -> Result<Tensor3> {
        if packed.bands.len() != self.layout.n_band() {
            return Err(Error::Shape(format!(
                "{} packed bands for a {}-band model",
                packed.bands.len(),
                self.layout.n_band()
            )));
        }
        let n = self.config.features;
        let frames = packed.bands.first().map_or(0, |m| m.cols);
        for (i, (m, &bw)) in packed.bands.iter().zip(self.layout.widths()).enumerate() {
            if m.rows != 2 * bw + 1 || m.cols != frames {
                return Err(Error::Shape(format!(
                    "band {i} packs {}x{}, expected {}x{frames}",
                    m.rows,
                    m.cols,
                    2 * bw + 1
                )));
            }
        }
        let mut h = Tensor3::zeros(self.layout.n_band(), n, frames);
        h.data
            .par_chunks_mut((n * frames).max(1))
            .zip(packed.bands.par_iter().zip(&self.stems))
            .for_each(|(out, (m, stem))| {
                let mut normed = vec![0.0; m.data.len()];
                rmsnorm_group(&m.data, &stem.norm, m.rows, frames, &mut normed);
                pointwise_group(&normed, &stem.proj, frames, out);
            });
        Ok(h)
    }

    fn check_hidden(&self, h: &Tensor3) -> Result<()> {
        if h.groups != self.layout.n_band() || h.channels != self.config.features {
            return Err(Error::Shape(format!(
                "hidden state {:?} does not match ({}, {}, T)",
                h.shape(),
                self.layout.n_band(),
                self.config.features
            )));
        }
        Ok(())
    }

    /// Cross-band attention plus SwiGLU, each pre-normed with its own
    /// residual; returns the increment over `h`.
    pub fn attention_path(&self, h: &Tensor3, layer: usize) -> Result<Tensor3> {
        self.check_hidden(h)?;
        let b = self.block(layer)?;
        let attn = multi_head_attention(&rmsnorm(h, &b.attn_norm)?, &b.attn, self.config.heads, Some(&self.rope))?;
        let mid = h.add(&attn)?;
        let ffn = swiglu(&rmsnorm(&mid, &b.ffn_norm)?, &b.w_in, &b.w_gate, &b.w_out)?;
        attn.add(&ffn)
    }

    /// Per-band ConvNeXt stack over time with dilations `{1, d, 1}`; returns
    /// the increment over `h`.
    pub fn temporal_path(&self, h: &Tensor3, layer: usize) -> Result<Tensor3> {
        self.check_hidden(h)?;
        let b = self.block(layer)?;
        let d = self.config.dilation(layer);
        let dilations = [1, d, 1];
        if b.temporal.len() == 1 {
            return convnext_stack(h, &b.temporal[0], &dilations);
        }
        let mut out = Tensor3::zeros(h.groups, h.channels, h.time);
        for (band, stack) in b.temporal.iter().enumerate() {
            let single = Tensor3::from_vec(1, h.channels, h.time, h.group(band).to_vec())?;
            let delta = convnext_stack(&single, stack, &dilations)?;
            out.group_mut(band).copy_from_slice(&delta.data);
        }
        Ok(out)
    }

    pub fn band_sequence_block(&self, h: &Tensor3, layer: usize) -> Result<Tensor3> {
        match self.config.block_mode {
            BlockMode::Parallel => {
                let a = self.attention_path(h, layer)?;
                let t = self.temporal_path(h, layer)?;
                let mut out = h.add(&a)?;
                out.add_assign(&t)?;
                Ok(out)
            }
            BlockMode::Sequential => {
                let mid = h.add(&self.attention_path(h, layer)?)?;
                mid.add(&self.temporal_path(&mid, layer)?)
            }
        }
    }

    fn block(&self, layer: usize) -> Result<&BlockWeights> {
        self.blocks
            .get(layer)
            .ok_or_else(|| Error::Shape(format!("layer {layer} out of range 0..{}", self.blocks.len())))
    }

    /// RMSNorm, 1x1 conv, SiLU, 1x1 conv, GLU for one band's `N x T` latent.
    /// Output rows alternate real and imaginary parts per bin.
    pub fn synthesis_head(&self, band: usize, latent: &Matrix) -> Result<BandSpectrum> {
        let head = self
            .heads
            .get(band)
            .ok_or_else(|| Error::Shape(format!("band {band} out of range")))?;
        if latent.rows != self.config.features {
            return Err(Error::Shape(format!(
                "head input has {} channels, expected {}",
                latent.rows, self.config.features
            )));
        }
        let x = Tensor3::from_vec(1, latent.rows, latent.cols, latent.data.clone())?;
        let y = rmsnorm(&x, &head.norm)?;
        let y = pointwise_conv(&y, &head.pw1)?.map(silu);
        let y = glu(&pointwise_conv(&y, &head.pw2)?)?;
        let width = self.layout.widths()[band];
        let frames = latent.cols;
        let mut bins = Vec::with_capacity(width * frames);
        for k in 0..width {
            for t in 0..frames {
                bins.push(Complex64::new(y.get(0, 2 * k, t), y.get(0, 2 * k + 1, t)));
            }
        }
        Ok(BandSpectrum { width, frames, bins })
    }

    /// `X -> X_hat` of identical shape.
    pub fn forward(&self, x: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        if x.n_freq != self.config.n_freq() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, model expects {}",
                x.n_freq,
                self.config.n_freq()
            )));
        }
        let packed = pack_band_features(x, &self.layout, self.config.eps)?;
        let mut h = self.stem(&packed)?;
        for layer in 0..self.config.layers {
            h = self.band_sequence_block(&h, layer)?;
        }
        let mut bands = (0..self.layout.n_band())
            .into_par_iter()
            .map(|i| self.synthesis_head(i, &h.group_matrix(i)))
            .collect::<Result<Vec<_>>>()?;
        if self.config.denormalize {
            for (i, band) in bands.iter_mut().enumerate() {
                let env = packed.envelope.band(i);
                for row in band.bins.chunks_exact_mut(band.frames.max(1)) {
                    row.iter_mut().zip(env).for_each(|(z, p)| *z *= *p);
                }
            }
        }
        let out = reassemble(&bands, &self.layout, x.params)?;
        if out.bins.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("generator produced non-finite output".into()));
        }
        Ok(out)
    }

    /// STFT, generator, inverse STFT at the input length.
    pub fn restore(&self, wave: &Waveform) -> Result<Waveform> {
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::SampleRate {
                expected: self.config.sample_rate,
                got: wave.sample_rate,
            });
        }
        let spec = stft(wave, &self.config.stft_params())?;
        let out = self.forward(&spec)?;
        Ok(Waveform::from_f64(&istft_f64(&out, wave.len())?, wave.sample_rate))
    }

    /// [`restore`](Self::restore) over segments of `segment_secs` that overlap
    /// by `overlap_secs`, joined with linear crossfades. Inputs no longer than
    /// one segment are processed in one piece.
    pub fn restore_chunked(&self, wave: &Waveform, segment_secs: f64, overlap_secs: f64) -> Result<Waveform> {
        let sr = wave.sample_rate as f64;
        let seg = (segment_secs * sr).round() as usize;
        let overlap = (overlap_secs * sr).round() as usize;
        if seg == 0 || overlap >= seg {
            return Err(Error::Config(format!(
                "segment of {seg} samples cannot overlap by {overlap}"
            )));
        }
        if wave.len() <= seg {
            return self.restore(wave);
        }
        let step = seg - overlap;
        let mut out = vec![0.0f32; wave.len()];
        let mut start = 0;
        loop {
            let end = (start + seg).min(wave.len());
            let piece = self.restore(&wave.with_samples(wave.samples[start..end].to_vec()))?;
            for (i, &v) in piece.samples.iter().enumerate() {
                let pos = start + i;
                // fade in over the overlap shared with the previous segment
                let w = if start > 0 && i < overlap {
                    (i as f32 + 0.5) / overlap as f32
                } else {
                    1.0
                };
                out[pos] = out[pos] * (1.0 - w) + v * w;
            }
            if end == wave.len() {
                break;
            }
            start += step;
        }
        Ok(wave.with_samples(out))
    }
}

fn convnext_stack(h: &Tensor3, stack: &[ConvNextWeights], dilations: &[usize]) -> Result<Tensor3> {
    let mut x = h.clone();
    let mut delta = Tensor3::zeros(h.groups, h.channels, h.time);
    for (w, &d) in stack.iter().zip(dilations) {
        let y = depthwise_conv1d(&x, &w.dw, Some(&w.dw_bias), d)?;
        let y = rmsnorm(&y, &w.norm)?;
        let y = glu(&pointwise_conv(&y, &w.pw_in)?)?;
        let y = layer_scale(&pointwise_conv(&y, &w.pw_out)?, &w.gamma)?;
        delta.add_assign(&y)?;
        x = h.add(&delta)?;
    }
    Ok(delta)
}

/// Build the model from `store` and restore `wave`.
pub fn restore(wave: &Waveform, store: &WeightStore, config: &ModelConfig) -> Result<Waveform> {
    Generator::new(config.clone(), store)?.restore(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::stft_f64;
    use rand::Rng;

    fn random_spec(config: &ModelConfig, frames: usize, seed: u64, scale: f64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = (0..config.n_freq() * frames)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0) * scale, rng.random_range(-1.0..1.0) * scale))
            .collect();
        ComplexSpectrogram::from_bins(bins, frames, config.stft_params()).unwrap()
    }

    fn toy_model(seed: u64) -> Generator {
        let cfg = ModelConfig::toy();
        Generator::new(cfg.clone(), &init_weights(&cfg, seed).unwrap()).unwrap()
    }

    fn set(store: &mut WeightStore, name: &str, f: impl Fn(usize, usize) -> f32) {
        let p = store.get_mut(name).unwrap();
        let cols = if p.shape.len() == 2 { p.shape[1] } else { 1 };
        for (idx, v) in p.data.iter_mut().enumerate() {
            *v = f(idx / cols, idx % cols);
        }
    }

    #[test]
    fn manifest_matches_hand_enumeration() {
        let cfg = ModelConfig {
            n_band: 4,
            features: 8,
            layers: 2,
            heads: 2,
            ..ModelConfig::toy()
        };
        let widths = mel_band_layout(cfg.n_freq(), 4, cfg.sample_rate).unwrap().widths().to_vec();
        let mut expected = std::collections::BTreeMap::new();
        for (i, w) in widths.iter().enumerate() {
            expected.insert(format!("stem.{i}.norm.gain"), vec![2 * w + 1]);
            expected.insert(format!("stem.{i}.proj.weight"), vec![8, 2 * w + 1]);
            expected.insert(format!("stem.{i}.proj.bias"), vec![8]);
            expected.insert(format!("heads.{i}.norm.gain"), vec![8]);
            expected.insert(format!("heads.{i}.pw1.weight"), vec![8, 8]);
            expected.insert(format!("heads.{i}.pw1.bias"), vec![8]);
            expected.insert(format!("heads.{i}.pw2.weight"), vec![4 * w, 8]);
            expected.insert(format!("heads.{i}.pw2.bias"), vec![4 * w]);
        }
        for l in 0..2 {
            expected.insert(format!("blocks.{l}.attn.norm.gain"), vec![8]);
            expected.insert(format!("blocks.{l}.ffn.norm.gain"), vec![8]);
            for p in ["q", "k", "v", "out"] {
                expected.insert(format!("blocks.{l}.attn.{p}.weight"), vec![8, 8]);
                expected.insert(format!("blocks.{l}.attn.{p}.bias"), vec![8]);
            }
            expected.insert(format!("blocks.{l}.ffn.w_in.weight"), vec![16, 8]);
            expected.insert(format!("blocks.{l}.ffn.w_gate.weight"), vec![16, 8]);
            expected.insert(format!("blocks.{l}.ffn.w_out.weight"), vec![8, 16]);
            for j in 0..3 {
                let p = format!("blocks.{l}.temporal.{j}");
                expected.insert(format!("{p}.dw.weight"), vec![8, 3]);
                expected.insert(format!("{p}.dw.bias"), vec![8]);
                expected.insert(format!("{p}.norm.gain"), vec![8]);
                expected.insert(format!("{p}.pw_in.weight"), vec![32, 8]);
                expected.insert(format!("{p}.pw_in.bias"), vec![32]);
                expected.insert(format!("{p}.pw_out.weight"), vec![8, 16]);
                expected.insert(format!("{p}.pw_out.bias"), vec![8]);
                expected.insert(format!("{p}.gamma"), vec![8]);
            }
        }
        let store = init_weights(&cfg, 1).unwrap();
        let got: std::collections::BTreeMap<String, Vec<usize>> =
            store.iter().map(|(n, p)| (n.to_string(), p.shape.clone())).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn init_is_deterministic_with_stated_values() {
        let cfg = ModelConfig::toy();
        let a = init_weights(&cfg, 9).unwrap();
        assert_eq!(a, init_weights(&cfg, 9).unwrap());
        assert_ne!(a, init_weights(&cfg, 10).unwrap());
        for (name, p) in a.iter() {
            if name.ends_with(".gamma") {
                assert!(p.data.iter().all(|&v| v == 1e-6));
            } else if name.ends_with(".gain") {
                assert!(p.data.iter().all(|&v| v == 1.0));
            } else if name.ends_with(".bias") {
                assert!(p.data.iter().all(|&v| v == 0.0));
            } else {
                let bound = (1.0 / p.shape[1] as f64).sqrt() as f32;
                assert!(p.data.iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn per_band_temporal_manifest() {
        let cfg = ModelConfig {
            temporal_weights: TemporalWeights::PerBand,
            ..ModelConfig::toy()
        };
        let m = manifest(&cfg).unwrap();
        assert!(m.iter().any(|(n, _)| n == "blocks.1.temporal.band7.2.gamma"));
        let g = Generator::new(cfg.clone(), &init_weights(&cfg, 3).unwrap()).unwrap();
        let x = random_spec(&cfg, 5, 1, 1.0);
        assert_eq!(g.forward(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn stem_shape_zero_and_band_independence() {
        let g = toy_model(2);
        let x = random_spec(g.config(), 7, 3, 1.0);
        let packed = pack_band_features(&x, g.layout(), g.config().eps).unwrap();
        let h = g.stem(&packed).unwrap();
        assert_eq!(h.shape(), (8, 16, 7));

        let mut zero = packed.clone();
        zero.bands.iter_mut().for_each(|m| m.data.iter_mut().for_each(|v| *v = 0.0));
        assert!(g.stem(&zero).unwrap().data.iter().all(|&v| v == 0.0));

        let mut perturbed = packed.clone();
        perturbed.bands[5].data.iter_mut().for_each(|v| *v *= -3.0);
        let h2 = g.stem(&perturbed).unwrap();
        for i in 0..8 {
            if i == 5 {
                assert_ne!(h.group(i), h2.group(i));
            } else {
                assert_eq!(h.group(i), h2.group(i));
            }
        }
        let mut bad = packed;
        bad.bands.pop();
        assert!(matches!(g.stem(&bad), Err(Error::Shape(_))));
    }

    fn zero_output_projections(store: &mut WeightStore, cfg: &ModelConfig) {
        for l in 0..cfg.layers {
            set(store, &format!("blocks.{l}.attn.out.weight"), |_, _| 0.0);
            set(store, &format!("blocks.{l}.attn.out.bias"), |_, _| 0.0);
            set(store, &format!("blocks.{l}.ffn.w_out.weight"), |_, _| 0.0);
            for j in 0..TEMPORAL_DEPTH {
                set(store, &format!("blocks.{l}.temporal.{j}.gamma"), |_, _| 0.0);
            }
        }
    }

    #[test]
    fn zero_output_projections_make_blocks_identity() {
        for mode in [BlockMode::Parallel, BlockMode::Sequential] {
            let cfg = ModelConfig {
                block_mode: mode,
                ..ModelConfig::toy()
            };
            let mut store = init_weights(&cfg, 4).unwrap();
            // make the rest of the block non-trivial
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for (name, p) in store.iter().map(|(n, p)| (n.to_string(), p.clone())).collect::<Vec<_>>() {
                if name.ends_with(".bias") {
                    let mut q = p;
                    q.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                    store.insert(name, q);
                }
            }
            zero_output_projections(&mut store, &cfg);
            let g = Generator::new(cfg.clone(), &store).unwrap();
            let mut h = Tensor3::zeros(8, 16, 6);
            h.data.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            for layer in 0..cfg.layers {
                assert_eq!(g.band_sequence_block(&h, layer).unwrap(), h);
            }
        }
    }

    #[test]
    fn single_frame_is_valid() {
        let g = toy_model(6);
        let mut h = Tensor3::zeros(8, 16, 1);
        h.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        let out = g.band_sequence_block(&h, 0).unwrap();
        assert_eq!(out.shape(), (8, 16, 1));
        assert!(out.is_finite());
        let x = random_spec(g.config(), 1, 2, 1.0);
        assert_eq!(g.forward(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn temporal_receptive_field_is_exact() {
        let cfg = ModelConfig::toy();
        let mut store = init_weights(&cfg, 7).unwrap();
        for l in 0..cfg.layers {
            for j in 0..TEMPORAL_DEPTH {
                set(&mut store, &format!("blocks.{l}.temporal.{j}.gamma"), |_, _| 1.0);
            }
        }
        let g = Generator::new(cfg.clone(), &store).unwrap();
        let frames = 64;
        let t0 = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut h = Tensor3::zeros(8, 16, frames);
        h.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut hp = h.clone();
        for b in 0..8 {
            for c in 0..16 {
                hp.set(b, c, t0, h.get(b, c, t0) + 0.5);
            }
        }
        for layer in 0..cfg.layers {
            let d = cfg.dilation(layer);
            let radius = (1 + d + 1) * (cfg.conv_kernel - 1) / 2;
            let a = g.temporal_path(&h, layer).unwrap();
            let b = g.temporal_path(&hp, layer).unwrap();
            let mut changed = vec![false; frames];
            for band in 0..8 {
                for c in 0..16 {
                    for t in 0..frames {
                        if a.get(band, c, t) != b.get(band, c, t) {
                            changed[t] = true;
                        }
                    }
                }
            }
            for (t, &ch) in changed.iter().enumerate() {
                let dist = t.abs_diff(t0);
                if dist > radius {
                    assert!(!ch, "layer {layer}: frame {t} changed outside radius {radius}");
                }
            }
            assert!(changed[t0 - radius] && changed[t0 + radius], "layer {layer}: field edge unreached");
        }
    }

    #[test]
    fn head_channels_and_zero_input() {
        let cfg = ModelConfig::default();
        let m = manifest(&cfg).unwrap();
        let layout = mel_band_layout(cfg.n_freq(), cfg.n_band, cfg.sample_rate).unwrap();
        for (i, &bw) in layout.widths().iter().enumerate() {
            let (_, shape) = m.iter().find(|(n, _)| *n == format!("heads.{i}.pw2.weight")).unwrap();
            assert_eq!(shape[0] / 2, 2 * bw);
        }
        let g = toy_model(11);
        for band in 0..8 {
            let out = g.synthesis_head(band, &Matrix::zeros(16, 5)).unwrap();
            assert_eq!((out.width, out.frames), (g.layout().widths()[band], 5));
            assert!(out.bins.iter().all(|z| z.re == 0.0 && z.im == 0.0));
        }
        assert!(g.synthesis_head(0, &Matrix::zeros(15, 5)).is_err());
    }

    #[test]
    fn pre_glu_width_checked_at_load() {
        let cfg = ModelConfig::toy();
        let mut store = init_weights(&cfg, 1).unwrap();
        let p = store.get("heads.0.pw2.weight").unwrap().clone();
        store.insert("heads.0.pw2.weight", Param::filled(vec![p.shape[0] / 2, p.shape[1]], 0.0));
        assert!(matches!(Generator::new(cfg, &store), Err(Error::Shape(_))));
    }

    #[test]
    fn heads_are_band_independent() {
        let g = toy_model(12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = Tensor3::zeros(8, 16, 4);
        h.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let before: Vec<_> = (0..8).map(|i| g.synthesis_head(i, &h.group_matrix(i)).unwrap()).collect();
        h.group_mut(3).iter_mut().for_each(|v| *v += 1.0);
        for i in 0..8 {
            let after = g.synthesis_head(i, &h.group_matrix(i)).unwrap();
            assert_eq!(after == before[i], i != 3);
        }
    }

    #[test]
    fn forward_shape_finiteness_determinism() {
        let g = toy_model(13);
        for (seed, scale) in [(1, 1e-6), (2, 1e-3), (3, 1.0), (4, 1e3)] {
            let x = random_spec(g.config(), 9, seed, scale);
            let y = g.forward(&x).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.bins.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
            assert_eq!(y, g.forward(&x).unwrap());
        }
        let wrong = ComplexSpectrogram::zeros(crate::spectral::StftParams::hann(128, 64), 3);
        assert!(matches!(g.forward(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn restore_contract() {
        let g = toy_model(14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wave = Waveform::new((0..4000).map(|_| rng.random_range(-0.5..0.5)).collect(), 48000).unwrap();
        let a = g.restore(&wave).unwrap();
        assert_eq!(a.len(), wave.len());
        assert_eq!(a, g.restore(&wave).unwrap());
        let other = Waveform::new(wave.samples.clone(), 16000).unwrap();
        assert!(matches!(
            g.restore(&other),
            Err(Error::SampleRate { expected: 48000, got: 16000 })
        ));
    }

    /// Weights under which the network passes the normalized bins straight
    /// through: the stem embeds them isometrically (dropping the log
    /// envelope), the blocks add nothing, the head RMSNorm undoes the stem
    /// RMSNorm scale, SiLU and GLU run in their linear regimes, and the
    /// envelope multiplication restores the original level.
    fn identity_weights(cfg: &ModelConfig) -> WeightStore {
        const SHIFT: f32 = 30.0;
        const GATE: f32 = 40.0;
        const STEM_GAIN: f32 = 1e3;
        let n = cfg.features;
        let layout = mel_band_layout(cfg.n_freq(), cfg.n_band, cfg.sample_rate).unwrap();
        let mut store = init_weights(cfg, 0).unwrap();
        zero_output_projections(&mut store, cfg);
        let root_n = (n as f32).sqrt();
        for (i, &bw) in layout.widths().iter().enumerate() {
            assert!(2 * bw <= n);
            set(&mut store, &format!("stem.{i}.proj.weight"), |r, c| {
                if r == c && c < 2 * bw { STEM_GAIN } else { 0.0 }
            });
            set(&mut store, &format!("heads.{i}.pw1.weight"), |r, c| if r == c { 1.0 / root_n } else { 0.0 });
            set(&mut store, &format!("heads.{i}.pw1.bias"), |_, _| SHIFT);
            set(&mut store, &format!("heads.{i}.pw2.weight"), |r, c| if r == c && r < 2 * bw { 1.0 } else { 0.0 });
            set(&mut store, &format!("heads.{i}.pw2.bias"), |r, _| if r < 2 * bw { -SHIFT } else { GATE });
        }
        store
    }

    #[test]
    fn identity_weights_restore_the_input() {
        let cfg = ModelConfig {
            features: 96,
            heads: 2,
            ..ModelConfig::toy()
        };
        let store = identity_weights(&cfg);
        let g = Generator::new(cfg.clone(), &store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f32> = (0..6000)
            .map(|i| 0.3 * (i as f32 * 0.05).sin() + rng.random_range(-0.2..0.2))
            .collect();
        let wave = Waveform::new(samples, cfg.sample_rate).unwrap();
        let x = stft_f64(&wave.to_f64(), &cfg.stft_params()).unwrap();
        let y = g.forward(&x).unwrap();
        let spec_err = x
            .bins
            .iter()
            .zip(&y.bins)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(spec_err < 1e-6, "spectral error {spec_err}");
        let out = g.restore(&wave).unwrap();
        let err = wave
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 1e-5, "waveform error {err}");
    }

    #[test]
    fn chunked_restore_matches_length_and_short_path() {
        let g = toy_model(15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wave = Waveform::new((0..9000).map(|_| rng.random_range(-0.5..0.5)).collect(), 48000).unwrap();
        let whole = g.restore(&wave).unwrap();
        assert_eq!(g.restore_chunked(&wave, 1.0, 0.1).unwrap(), whole);
        let chunked = g.restore_chunked(&wave, 0.05, 0.01).unwrap();
        assert_eq!(chunked.len(), wave.len());
        assert!(chunked.samples.iter().all(|v| v.is_finite()));
        assert!(g.restore_chunked(&wave, 0.01, 0.02).is_err());
    }

    #[test]
    fn weight_file_round_trip_and_missing_tensor() {
        let cfg = ModelConfig::toy();
        let store = init_weights(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.srsw");
        crate::generator::save_weights(&store, &path).unwrap();
        let loaded = crate::generator::load_weights(&path).unwrap();
        assert_eq!(loaded, store);
        let mut pruned = loaded;
        pruned.remove("blocks.1.ffn.w_gate.weight");
        crate::generator::save_weights(&pruned, &path).unwrap();
        let err = Generator::new(cfg, &crate::generator::load_weights(&path).unwrap()).unwrap_err();
        assert!(matches!(&err, Error::Manifest(m) if m.contains("blocks.1.ffn.w_gate.weight")));
    }
}
