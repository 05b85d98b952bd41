//! Seeded corruption pipeline producing degraded/clean training pairs.

mod chain;
pub mod rng;
pub mod stages;

pub use chain::{
    apply_chain, apply_stage, file_seed, replay, sample_trace, AppliedStage, DegradationSpec, NoiseSource, Range,
    StageConfig, StageKind, StageTrace, DEFAULT_ORDER, DEFAULT_PROBABILITY,
};
pub use stages::{
    add_noise, clip, freq_shape, measured_snr_db, reverb, spectral_corrupt, time_varying_gain, ClipCurve, GainCurve,
};
