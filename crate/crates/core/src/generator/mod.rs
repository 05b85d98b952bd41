//! Band-split restoration generator.

pub mod config;
pub(crate) mod model;
pub mod weights;

pub use config::{BlockMode, ModelConfig, TemporalWeights};
pub use model::{init_weights, manifest, restore, Generator, LAYER_SCALE_INIT, TEMPORAL_DEPTH};
pub use weights::{load_weights, save_weights, Manifest, Param, WeightStore};
