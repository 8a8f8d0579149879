//! Distributional temporal-difference policy evaluation with linear function
//! approximation on finite Markov reward processes.
//!
//! The crate covers categorical signed measures and their projection
//! ([`categorical`]), the structural matrices of the linear-categorical
//! Bellman equation ([`bellman`]), finite reward processes and samplers
//! ([`mdp`]), exact fixed points ([`fixed_point`]), streaming learners
//! ([`learners`]) and numerical checks of the stability analysis
//! ([`stability`]).

pub mod bellman;
pub mod categorical;
pub mod fixed_point;
pub mod learners;
pub mod linalg;
pub mod mdp;
pub mod stability;

pub use categorical::{CategoricalGrid, GeneralMeasure, SignedCategoricalMeasure};
pub use linalg::{Mat, Vector};
pub use mdp::{FeatureMap, MrpModel, SampleMode, SampleStream, Transition};
pub use learners::{Algorithm, LearnerConfig, LearnerState, Params, Reference, RunTrace};
pub use stability::{Check, CheckStatus};
