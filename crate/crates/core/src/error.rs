use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("innovation covariance is numerically singular at t={t} (condition number {condition:e})")]
    Singular { t: usize, condition: f64 },

    #[error("Riccati iteration did not converge after {iterations} iterations (last step {last_delta:e})")]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        last: DMatrix<f64>,
    },

    #[error("particle weights degenerated at t={t} (total likelihood {total:e})")]
    Degenerate { t: usize, total: f64 },

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    TrainingDiverged {
        epoch: usize,
        loss: f64,
        history: Vec<f64>,
    },

    #[error("method `{method}` violated the filter contract: {detail}")]
    Contract { method: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
