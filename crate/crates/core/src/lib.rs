//! Random-feature regression under covariate shift.
//!
//! Data generation on diagonal covariance spectra, minimum-norm and ensembled
//! random-feature estimators, Monte Carlo ID/OOD risk estimation, and
//! closed-form kernel and moment identities used to check them.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod features;
pub mod kernels;
pub mod linalg;
pub mod risk;
pub mod rng;
pub mod spectra;

pub use datagen::{EtaDist, GroundTruth, NoiseModel, ShiftConstruction, ShiftModel};
pub use error::{Error, Result};
pub use features::{Activation, EnsembleModel, FeatureModel, FittedModel, Predictor};
pub use spectra::{Spectrum, SpectrumKind};
