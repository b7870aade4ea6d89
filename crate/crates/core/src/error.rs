//! Error taxonomy shared by the whole crate.

use thiserror::Error;

/// All failure modes surfaced by the library.
///
/// Numerical routines that can make partial progress (optimisers, samplers)
/// attach their best iterate to the error so callers can inspect how far the
/// computation got.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A distribution or model parameter is outside its domain.
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    /// The requested operation is not defined for this kind (e.g. the score
    /// of a categorical distribution).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Vector or matrix dimensions do not match the model.
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// An iterative routine ran out of budget before meeting its tolerance.
    /// `last` carries the best iterate found.
    #[error("failed to converge after {iters} iterations (criterion: {criterion})")]
    NoConverge {
        iters: usize,
        criterion: String,
        last: Vec<f64>,
    },

    /// Iterates left the trust region (norm above the divergence threshold).
    #[error("optimiser diverged: |theta| = {norm:.3e} at step {step}")]
    Diverged { norm: f64, step: usize },

    /// An estimated curvature matrix is numerically singular.
    #[error("singular curvature: min eigenvalue {min_eig:.3e}")]
    SingularCurvature { min_eig: f64 },

    /// Grid bounds clip non-negligible posterior mass.
    #[error(
        "grid bounds too tight: boundary mass {mass:.3e}; suggest widening to {suggested:?}"
    )]
    BoundsTooTight {
        mass: f64,
        suggested: Vec<(f64, f64)>,
    },

    /// Too many Monte Carlo samples were rejected as non-finite.
    #[error("numerical instability: {rejected}/{total} samples rejected")]
    Instability { rejected: usize, total: usize },

    /// An inner (local) optimisation failed; carries the last iterate.
    #[error("inner fit failed for unit {unit}: {reason}")]
    InnerFit {
        unit: usize,
        reason: String,
        last: Vec<f64>,
    },

    /// A statistic is undefined on the given input (e.g. R-hat with
    /// zero-variance chains).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// Inputs that must share discretisation or length do not.
    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    /// Fewer draws than the statistic requires.
    #[error("too few draws: need {need}, got {got}")]
    TooFewDraws { need: usize, got: usize },

    /// A replication batch exceeded the tolerated failure rate.
    #[error("scenario {scenario}: {failed}/{total} replications failed at n = {n}")]
    ScenarioFailure {
        scenario: String,
        n: usize,
        failed: usize,
        total: usize,
    },

    /// A configuration file or value could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// File I/O wrapper.
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<String>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }
}
