use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("version mismatch in {}: found {found}, expected {expected}", path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("corrupt checkpoint {}: {reason}", path.display())]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("parse error in {}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] egosync_core::Error),
}

impl AppError {
    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        AppError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    /// Process exit status: 2 config, 3 artifact, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use egosync_core::Error as E;
        match self {
            AppError::Config(_) => 2,
            AppError::MissingArtifact(_)
            | AppError::VersionMismatch { .. }
            | AppError::CorruptCheckpoint { .. }
            | AppError::Parse { .. } => 3,
            AppError::Io { .. } => 1,
            AppError::Core(e) => match e {
                E::InvalidConfig(_) | E::InvalidShiftRange => 2,
                E::NonFiniteLoss { .. } | E::DegenerateInput(_) | E::DegenerateSkeleton(_) => 4,
                E::DuplicateId(_) | E::InvalidRecord(_) => 3,
                _ => 1,
            },
        }
    }

    /// Short category printed in front of the message on failure.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "artifact",
            4 => "numeric",
            _ => "error",
        }
    }
}

/// Attaches a path to an IO error; a missing file becomes `MissingArtifact`.
pub(crate) fn io_at(path: &Path) -> impl FnOnce(io::Error) -> AppError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            AppError::MissingArtifact(path.to_path_buf())
        } else {
            AppError::Io { path: path.to_path_buf(), source }
        }
    }
}
