pub mod cli;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod predictor;
pub mod resample;
pub mod skipdit;
pub mod synth;
pub mod vidio;
pub mod weights;

pub use error::{Error, Result};
