use std::path::PathBuf;

use hwprox_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("invalid config {}: {msg}", .path.display())]
    Schema { path: PathBuf, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),

    #[error("{0}")]
    Numerical(String),

    #[error("cannot write {}: {source}", .path.display())]
    Write { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradcheckFailed(_) | CliError::Write { .. } => 1,
            CliError::MissingInput(_) => 2,
            CliError::Schema { .. } | CliError::Invalid(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e {
                CoreError::MissingInput(_) => 2,
                CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                CoreError::Format(_)
                | CoreError::Corrupt(_)
                | CoreError::Argument(_)
                | CoreError::Validation(_)
                | CoreError::UnsupportedProx(_)
                | CoreError::Resource { .. }
                | CoreError::Json(_)
                | CoreError::Csv(_) => 3,
                CoreError::Divergence { .. }
                | CoreError::TrainingDiverged { .. }
                | CoreError::Evaluation(_)
                | CoreError::Degenerate(_) => 4,
                CoreError::Internal(_) | CoreError::Io(_) => 1,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
