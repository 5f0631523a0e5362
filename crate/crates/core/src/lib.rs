//! Training front end for a Mandarin singing-voice-synthesis stack:
//! score and annotation compilation, pitch-aware acoustic features,
//! desk-scale duration and acoustic models with their rhythm and
//! progressive pitch-weighted losses, segmentation-based augmentation,
//! and objective evaluation metrics.

pub mod acoustic;
pub mod augment;
pub mod config;
pub mod dsp;
pub mod duration;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod rows;
pub mod score;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
pub use real::Real;
