use thiserror::Error;

/// Error type shared by every module of the core crate.
///
/// The split matters to callers: `InvalidArgument` means the request itself is
/// malformed (wrong range, wrong model kind, malformed file) while `Domain` and
/// `NonConvergence` mean a numerically well-posed request failed (transform
/// evaluated outside its strip of convergence, iteration cap hit, unreachable
/// tolerance). The CLI maps the former to exit code 2 and the latter two to 3.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn no_convergence(msg: impl Into<String>) -> Self {
        CoreError::NonConvergence(msg.into())
    }
}
