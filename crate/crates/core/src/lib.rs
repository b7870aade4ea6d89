//! Mean-field variational Bayes for (possibly misspecified) parametric and
//! latent-variable models, together with the machinery needed to check its
//! frequentist behaviour empirically: pseudo-true parameter estimation,
//! sandwich covariances, exact-posterior baselines (dense grids and adaptive
//! random-walk Metropolis), and distributional diagnostics.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`] - scalar distribution kinds with densities, samplers and scores
//! * [`model`] - parametric and latent-variable model wrappers over datasets
//! * [`population`] - pseudo-true parameters, curvature and sandwich matrices
//! * [`vb`] - the mean-field Gaussian engine (global and latent variants)
//! * [`posterior`] - grid posteriors, Metropolis sampling and split R-hat
//! * [`diagnostics`] - limiting normals, TV/KL metrics and predictive scores
//! * [`scenario`] - end-to-end simulation studies and their metric tables
//! * [`report`] - stable on-disk formats (records, result tables, manifests)
//!
//! Everything downstream of a seed is deterministic: rerunning any operation
//! with the same inputs and seed reproduces its output bit for bit, with or
//! without the `parallel` feature.

pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod exec;
pub mod model;
pub mod numeric;
pub mod population;
pub mod posterior;
pub mod report;
pub mod scenario;
pub mod vb;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
