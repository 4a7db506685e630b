//! Keystroke-dynamics user identification in a reduced feature space.

pub mod assignment;
pub mod cli;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod qtransform;
pub mod reduce;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod unloc;

pub use error::{Error, Result};
