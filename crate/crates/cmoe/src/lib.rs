//! Training stack for a planar biped walker on procedural 1-D heightfields.
//!
//! The policy is a mixture-of-experts actor-critic whose gating network is
//! regularized by a swapped-prototype contrastive loss, fed by a variational
//! context estimator and an elevation autoencoder. Everything runs in f64 on
//! the CPU and is bit-reproducible for a given seed and config.

pub mod config;
pub mod contrastive;
pub mod estimators;
pub mod harness;
pub mod nn;
pub mod percept;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod terrain;
pub mod trainer;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("contract: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Process exit code for the CLI: config and checkpoint problems exit 2,
    /// numeric failures exit 3, anything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
