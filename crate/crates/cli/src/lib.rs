//! Experiment harness for distributional TD policy evaluation: learner
//! runs, step-size searches, K-scaling regression, verification sweeps
//! and SVG loss plots.

pub mod config;
pub mod experiment;
pub mod model_file;
pub mod output;
pub mod plot;
pub mod regression;
pub mod scaling;
pub mod search;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{Problem, Verdict};
