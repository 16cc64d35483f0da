//! Crate-wide error type; every module error converts into it.

use thiserror::Error;

use crate::codec::CodecError;
use crate::dataflow::DataflowError;
use crate::engine::EngineError;
use crate::network::IngestError;
use crate::prune::PruneError;
use crate::tensor::TensorError;
use crate::timing::TimingError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output mismatch in layer {layer}: sparse path differs from the dense oracle")]
    OracleMismatch { layer: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable class name for structured CLI messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Ingest(_) => "ingest",
            Error::Prune(_) => "prune",
            Error::Codec(_) => "codec",
            Error::Dataflow(_) => "dataflow",
            Error::Engine(_) => "engine",
            Error::Timing(_) => "timing",
            Error::Config(_) => "config",
            Error::OracleMismatch { .. } => "verify",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
