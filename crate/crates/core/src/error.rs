use std::path::PathBuf;

use crate::hwnet::HwnetParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("proximal operator not supported for {0}; use the multi-block solver")]
    UnsupportedProx(String),

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("training diverged at step {step}")]
    TrainingDiverged {
        step: usize,
        checkpoint: Box<HwnetParams>,
    },

    #[error("estimated tape memory {estimate} bytes exceeds budget {budget} bytes")]
    Resource { estimate: u64, budget: u64 },

    #[error("non-finite function value during evaluation: {0}")]
    Evaluation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
