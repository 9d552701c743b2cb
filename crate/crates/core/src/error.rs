use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular correlation matrix after regularization in {scope}{}", block_suffix(*.block))]
    Singular { scope: String, block: Option<usize> },

    #[error("error covariance is not PSD in {scope}: min eigenvalue {min_eigenvalue:e}")]
    InconsistentStats { scope: String, min_eigenvalue: f64 },

    #[error("unknown scheme `{0}` (expected local, central or mace)")]
    UnknownScheme(String),

    #[error("unknown sweep parameter `{0}` (expected tau_p, N, L, K or eta)")]
    UnknownSweepParam(String),

    #[error("{0}")]
    Rows(String),

    #[error("sweep {param}={value}, realization {realization}: {source}")]
    SweepPoint {
        param: String,
        value: f64,
        realization: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn block_suffix(block: Option<usize>) -> String {
    match block {
        Some(b) => format!(" at block {b}"),
        None => String::new(),
    }
}

impl SimError {
    /// Attaches scope and block context to a bare solver failure.
    pub fn in_scope(self, scope: impl Into<String>, block: Option<usize>) -> Self {
        match self {
            SimError::Singular { .. } => SimError::Singular { scope: scope.into(), block },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
