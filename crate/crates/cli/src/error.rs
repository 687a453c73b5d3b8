use gradtree_core::CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Everything the binary can fail with, partitioned so each variant maps to
/// a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Config rejected before any computation ran; carries every problem
    /// found in one pass so the user can fix them together.
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl CliError {
    /// 0 is success, 2 means the inputs were rejected, 3 means the inputs
    /// were well-formed but the requested computation left its valid domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Json { .. } => 2,
            CliError::Core(core) => match core {
                CoreError::InvalidArgument(_)
                | CoreError::ModelFile(_)
                | CoreError::Json(_) => 2,
                CoreError::Domain(_) | CoreError::NonConvergence(_) => 3,
                CoreError::Io(_) => 1,
            },
            CliError::Io(_) => 1,
        }
    }
}
