use std::path::PathBuf;

/// Failures of the IO, orchestration and CLI layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] semicomp_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed content; `line` is 1-based with the header on line 1.
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: schema mismatch: {msg}", path.display())]
    Schema { path: PathBuf, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bootstrap unstable: {failed} of {total} resamples failed")]
    BootstrapUnstable { failed: usize, total: usize },
    #[error("study failed: {0}")]
    Study(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Machine-readable category: `validation`, `numeric`, `config` or `io`.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Core(e) => e.category(),
            Error::Parse { .. } | Error::Schema { .. } | Error::Format { .. } => "validation",
            Error::BootstrapUnstable { .. } | Error::Study(_) => "numeric",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit status for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "validation" => 2,
            "numeric" => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
