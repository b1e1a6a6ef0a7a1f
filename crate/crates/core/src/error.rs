use alloc::string::String;

/// Failure categories shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Copula derivative requested on the boundary of the unit square.
    #[error("copula argument on the boundary (u = {u}, v = {v})")]
    Boundary { u: f64, v: f64 },
    #[error("outside the attainable domain: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("degenerate stratum: {0}")]
    DegenerateStratum(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::Boundary { .. } | Error::Domain(_) => "validation",
            Error::DegenerateData(_) | Error::DegenerateStratum(_) => "validation",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
