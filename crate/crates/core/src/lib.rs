pub mod audio_io;
pub mod bench;
pub mod bandsplit;
pub mod cli;
pub mod degrade;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod nncore;
pub mod ranking;
pub mod spectral;

pub use error::{Error, Result};
