use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the physical model.
    #[error("domain error: {0}")]
    Domain(String),

    /// The quadrature grid does not resolve the fastest Fresnel chirp.
    #[error("quadrature grid step {step_mm:e} mm is coarser than the required {required_mm:e} mm")]
    UnresolvedChirp { step_mm: f64, required_mm: f64 },

    /// The path geometry makes the requested numerical route ill-defined.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    /// The config file is not well-formed JSON.
    #[error("config {path}: parse error: {message}")]
    ConfigParse { path: PathBuf, message: String },

    /// The JSON does not match the config schema.
    #[error("config {path}: schema violation: {message}")]
    ConfigSchema { path: PathBuf, message: String },

    /// A value in the config violates a physical invariant.
    #[error("config {path}: invalid value: {message}")]
    ConfigInvalid { path: PathBuf, message: String },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}, row {row}: counts `{value}` is not a nonnegative integer")]
    NonIntegerCounts {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("{path}, row {row}: positions are not strictly increasing")]
    NonMonotonePositions { path: PathBuf, row: usize },

    #[error("{path}, row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for this error: 2 for configuration and input
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnresolvedChirp { .. } | Error::Degenerate(_) | Error::Fit(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
