//! Confidence intervals and simultaneous bands for coefficients of
//! high-dimensional linear models whose covariates carry additive
//! measurement error.
//!
//! The pipeline has three steps per target coefficient `j`:
//!
//! 1. a pilot fit `β̂` by noise-corrected ℓ1-penalised least squares
//!    ([`eiv_lasso`]);
//! 2. a nodewise corrected regression of `z_j` on the other covariates,
//!    giving the orthogonalisation direction `μ̂^j` ([`nodewise`]);
//! 3. the closed-form root `β̌_j` of an orthogonal score, with plug-in
//!    standard error and pointwise interval ([`debias`]).
//!
//! Simultaneous bands over a target set come from a Gaussian multiplier
//! bootstrap of the max statistic ([`bootstrap`]). Missing-at-random designs
//! are handled by estimating the noise covariance ([`gamma_mar`]).
//! [`simstudy`] runs Monte Carlo size and family-wise error studies, and
//! [`graph`] applies the machinery to every node of a Gaussian graphical
//! model.

pub mod bootstrap;
pub mod data;
pub mod debias;
pub mod eiv_lasso;
pub mod error;
pub mod gamma_mar;
pub mod graph;
pub mod nodewise;
pub mod normal;
pub mod rng;
pub mod simstudy;

pub use bootstrap::{simultaneous_bands, BandResult, MultiplierDraws};
pub use data::{Dataset, NoiseKind, NoiseSpec};
pub use debias::{run_inference, DebiasCell, DebiasTable, InferenceOptions, VarianceAt};
pub use eiv_lasso::{FitResult, SolverConfig, Tuning};
pub use error::{Error, Result};
pub use simstudy::{SimConfig, SimReport};
