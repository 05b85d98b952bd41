use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::StftParams;

/// How the cross-band and temporal paths combine inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    /// `H + attn(H) + temporal(H)`
    Parallel,
    /// `H1 = H + attn(H)`, then `H1 + temporal(H1)`
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalWeights {
    Shared,
    PerBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_band: usize,
    /// Shared latent width N.
    pub features: usize,
    /// Number of band-sequence blocks L.
    pub layers: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub max_dilation: usize,
    pub ff_expansion: usize,
    pub eps: f64,
    pub block_mode: BlockMode,
    pub temporal_weights: TemporalWeights,
    /// Multiply head outputs by the band envelope before reassembly.
    pub denormalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48000,
            n_fft: 4096,
            hop: 2048,
            n_band: 64,
            features: 128,
            layers: 6,
            heads: 4,
            conv_kernel: 3,
            max_dilation: 8,
            ff_expansion: 2,
            eps: crate::bandsplit::DEFAULT_EPS,
            block_mode: BlockMode::Parallel,
            temporal_weights: TemporalWeights::Shared,
            denormalize: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used throughout the tests.
    pub fn toy() -> Self {
        Self {
            n_fft: 256,
            hop: 128,
            n_band: 8,
            features: 16,
            layers: 2,
            heads: 2,
            ..Self::default()
        }
    }

    pub fn n_freq(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn head_dim(&self) -> usize {
        self.features / self.heads
    }

    pub fn stft_params(&self) -> StftParams {
        StftParams::hann(self.n_fft, self.hop)
    }

    /// Dilation of the middle convolution in block `layer` (0-based):
    /// `min(2^(layer+1), max_dilation)`.
    pub fn dilation(&self, layer: usize) -> usize {
        let grown = 1usize.checked_shl(layer as u32 + 1).unwrap_or(usize::MAX);
        grown.min(self.max_dilation)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        self.stft_params().validate()?;
        if self.n_band == 0 || self.n_band > self.n_freq() {
            return fail(format!("n_band must lie in 1..={}, got {}", self.n_freq(), self.n_band));
        }
        if self.features == 0 || self.heads == 0 || self.features % self.heads != 0 {
            return fail(format!("features {} not divisible by heads {}", self.features, self.heads));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!("head dimension {} must be even for rotary encoding", self.head_dim()));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.max_dilation == 0 {
            return fail("max_dilation must be at least 1".into());
        }
        if self.conv_kernel % 2 == 0 {
            return fail(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.ff_expansion == 0 {
            return fail("ff_expansion must be at least 1".into());
        }
        if !(self.eps >= 0.0) {
            return fail(format!("eps must be nonnegative, got {}", self.eps));
        }
        Ok(())
    }

    /// Flat `key = value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sample_rate = {}", self.sample_rate);
        let _ = writeln!(s, "n_fft = {}", self.n_fft);
        let _ = writeln!(s, "hop = {}", self.hop);
        let _ = writeln!(s, "n_band = {}", self.n_band);
        let _ = writeln!(s, "features = {}", self.features);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "conv_kernel = {}", self.conv_kernel);
        let _ = writeln!(s, "max_dilation = {}", self.max_dilation);
        let _ = writeln!(s, "ff_expansion = {}", self.ff_expansion);
        let _ = writeln!(s, "eps = {:e}", self.eps);
        let mode = match self.block_mode {
            BlockMode::Parallel => "parallel",
            BlockMode::Sequential => "sequential",
        };
        let _ = writeln!(s, "block_mode = {mode}");
        let tw = match self.temporal_weights {
            TemporalWeights::Shared => "shared",
            TemporalWeights::PerBand => "per_band",
        };
        let _ = writeln!(s, "temporal_weights = {tw}");
        let _ = writeln!(s, "denormalize = {}", self.denormalize);
        s
    }

    /// Parse the flat text form. Missing keys keep their defaults; unknown
    /// keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_key_values(text)?;
        let mut cfg = Self::default();
        for (key, value) in &entries {
            let bad = || Error::Parse(format!("invalid value {value:?} for {key}"));
            let int = || value.parse::<usize>().map_err(|_| bad());
            match key.as_str() {
                "sample_rate" => cfg.sample_rate = value.parse().map_err(|_| bad())?,
                "n_fft" => cfg.n_fft = int()?,
                "hop" => cfg.hop = int()?,
                "n_band" => cfg.n_band = int()?,
                "features" => cfg.features = int()?,
                "layers" => cfg.layers = int()?,
                "heads" => cfg.heads = int()?,
                "conv_kernel" => cfg.conv_kernel = int()?,
                "max_dilation" => cfg.max_dilation = int()?,
                "ff_expansion" => cfg.ff_expansion = int()?,
                "eps" => cfg.eps = value.parse().map_err(|_| bad())?,
                "block_mode" => {
                    cfg.block_mode = match value.as_str() {
                        "parallel" => BlockMode::Parallel,
                        "sequential" => BlockMode::Sequential,
                        _ => return Err(bad()),
                    }
                }
                "temporal_weights" => {
                    cfg.temporal_weights = match value.as_str() {
                        "shared" => TemporalWeights::Shared,
                        "per_band" => TemporalWeights::PerBand,
                        _ => return Err(bad()),
                    }
                }
                "denormalize" => cfg.denormalize = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::audio_io::write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// `key = value` lines; `#` starts a comment. Later keys override earlier ones.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::toy();
        cfg.block_mode = BlockMode::Sequential;
        cfg.temporal_weights = TemporalWeights::PerBand;
        cfg.eps = 3.5e-9;
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn dilation_schedule_caps() {
        let cfg = ModelConfig::default();
        let d: Vec<usize> = (0..6).map(|l| cfg.dilation(l)).collect();
        assert_eq!(d, vec![2, 4, 8, 8, 8, 8]);
        let one = ModelConfig {
            max_dilation: 1,
            ..ModelConfig::default()
        };
        assert_eq!(one.dilation(0), 1);
        assert_eq!(cfg.dilation(200), 8);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig::from_text("heads = 3").is_err());
        assert!(ModelConfig::from_text("n_band = 5000").is_err());
        assert!(ModelConfig::from_text("layers = 0").is_err());
        assert!(ModelConfig::from_text("bogus = 1").is_err());
        assert!(ModelConfig::from_text("conv_kernel = 4").is_err());
        assert!(ModelConfig::from_text("n_fft").is_err());
    }

    #[test]
    fn comments_and_defaults() {
        let cfg = ModelConfig::from_text("# toy\nn_fft = 256 # small\nhop = 128\nn_band = 8\n").unwrap();
        assert_eq!(cfg.n_fft, 256);
        assert_eq!(cfg.features, 128);
    }
}
