use std::path::PathBuf;

use demandgraph_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed file {}: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version { kind: &'static str, found: u32, expected: u32 },
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<AppError> },
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn corrupt(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        AppError::Corrupt { path: path.into(), detail: detail.to_string() }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ AppError::Stage { .. } => already,
            other => AppError::Stage { stage, source: Box::new(other) },
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Vocabulary(_) | CoreError::UnknownBaseline(_) => 1,
                CoreError::NumericalFailure { .. } => 3,
                _ => 2,
            },
            AppError::Config(_) => 1,
            AppError::Io { .. } | AppError::Corrupt { .. } | AppError::Version { .. } => 2,
            AppError::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<AppError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
