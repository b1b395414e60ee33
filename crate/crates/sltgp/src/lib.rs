//! Soft-label-transferred Gaussian process classification (SLT-GP).
//!
//! Binary GP classification that exploits privileged features available only
//! at training time. A GP classifier fitted on the privileged features
//! produces continuous soft labels; a two-task GP (soft-label regression as
//! the source task, hard-label classification as the target task) coupled by
//! a task similarity `rho` transfers that information to the deployable
//! classifier. Inference uses expectation propagation with a mixture of
//! Gaussian and probit likelihoods, hyperparameters are chosen by empirical
//! Bayes on the conditional marginal likelihood, and a PAC-Bayes risk bound
//! on the same quantity is provided.

pub mod datagen;
pub mod ep;
pub mod gpc;
pub mod kernels;
pub mod model_selection;
pub mod numerics;
pub mod pacbayes;
pub mod runner;
pub mod slt;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (last jitter tried: {max_jitter:.3e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("task similarity rho must lie in [0, 1], got {0}")]
    RhoOutOfRange(f64),
    #[error("noise rate r must lie in [0, 1], got {0}")]
    ROutOfRange(f64),
    #[error("invalid bracket: lower {lower} must be below upper {upper}")]
    InvalidBracket { lower: f64, upper: f64 },
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("unknown generator name: {0}")]
    UnknownGenerator(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("input and privileged column sets overlap on {0}")]
    ColumnOverlap(String),
    #[error("label column must contain exactly two distinct classes: {0}")]
    SingleClass(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
