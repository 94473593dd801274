use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] interlace_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// A file that exists but cannot be parsed or fails its checksum.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// A required input that is absent.
    #[error("missing {0}")]
    Missing(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.to_string() }
    }

    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(interlace_core::Error::Numerical(_)) => 2,
            _ => 1,
        }
    }
}
